#include "eki/linear_analysis.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>

namespace eki {

SpectralE SpectralE::from(const Matrix& e0) {
  if (e0.rows() != e0.cols()) throw DimensionError("E(0) must be square");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(e0);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of E(0) failed");
  const Index n = e0.rows();
  SpectralE spec;
  spec.X.resize(n, n);
  spec.lambda0.resize(n);
  for (Index i = 0; i < n; ++i) {
    spec.X.col(i) = eig.eigenvectors().col(n - 1 - i);
    spec.lambda0[i] = eig.eigenvalues()[n - 1 - i];
  }
  const double cutoff = 1e-12 * std::max(spec.lambda0.size() ? spec.lambda0[0] : 0.0, 0.0);
  for (Index i = 0; i < n; ++i)
    if (spec.lambda0[i] <= cutoff) spec.lambda0[i] = 0.0;
  return spec;
}

Index SpectralE::rank() const { return (lambda0.array() > 0.0).count(); }

DeviationMatrices deviation_matrices_from_images(const Eigen::Ref<const Matrix>& images,
                                                 const Vector& truth_image,
                                                 const GammaWeight& gamma) {
  const Matrix wae = gamma.whiten(deviations(images));
  const Matrix war = gamma.whiten(images.colwise() - truth_image);
  DeviationMatrices dm;
  dm.E = wae.transpose() * wae;
  dm.F = war.transpose() * wae;
  dm.R = war.transpose() * war;
  return dm;
}

DeviationMatrices deviation_matrices(const Ensemble& ens, const Vector& truth,
                                     const InverseProblem& prob) {
  const Matrix& a = prob.forward.matrix();
  if (truth.size() != ens.dim()) throw DimensionError("truth has wrong dimension");
  return deviation_matrices_from_images(a * ens.matrix(), a * truth, prob.noise.gamma);
}

MatrixRates matrix_ode_rhs(const DeviationMatrices& dm, Index J) {
  const double c = -2.0 / static_cast<double>(J);
  return {c * dm.E * dm.E, c * dm.F * dm.E, c * dm.F * dm.F.transpose()};
}

Matrix analytic_E(const SpectralE& spec, double t, Index J) {
  if (t < 0.0) throw Error("analytic_E needs t >= 0");
  Vector lambda(spec.lambda0.size());
  for (Index i = 0; i < lambda.size(); ++i) {
    const double l0 = spec.lambda0[i];
    lambda[i] = l0 == 0.0 ? 0.0 : 1.0 / (2.0 * t / static_cast<double>(J) + 1.0 / l0);
  }
  return spec.X * lambda.asDiagonal() * spec.X.transpose();
}

Matrix analytic_L(const SpectralE& spec, double t, Index J) {
  if (t < 0.0) throw Error("analytic_L needs t >= 0");
  Vector omega(spec.lambda0.size());
  for (Index i = 0; i < omega.size(); ++i)
    omega[i] = 1.0 / std::sqrt(2.0 * spec.lambda0[i] * t / static_cast<double>(J) + 1.0);
  return spec.X * omega.asDiagonal() * spec.X.transpose();
}

std::vector<ResidualSplit> split_against(const Eigen::Ref<const Matrix>& vectors,
                                         const Eigen::Ref<const Matrix>& basis0,
                                         const GammaWeight& gamma) {
  if (basis0.rows() != vectors.rows()) throw DimensionError("basis and vectors differ in dimension");
  const Matrix wb = gamma.whiten(basis0);
  const Matrix gram = wb.transpose() * wb;

  // Pseudo-inverse of the (symmetric PSD) Gram matrix.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector& ev = eig.eigenvalues();
  const double largest = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  Vector inv = Vector::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    if (largest > 0.0 && ev[i] > 1e-12 * largest) inv[i] = 1.0 / ev[i];
  const Matrix pinv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();

  std::vector<ResidualSplit> out;
  out.reserve(static_cast<std::size_t>(vectors.cols()));
  for (Index j = 0; j < vectors.cols(); ++j) {
    const Vector v = vectors.col(j);
    const Vector coeff = pinv * (wb.transpose() * gamma.whiten(v));
    ResidualSplit s;
    s.parallel = basis0 * coeff;
    s.perp = v - s.parallel;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ResidualSplit> residual_split(const Ensemble& ens, const Vector& truth,
                                          const Eigen::Ref<const Matrix>& basis0,
                                          const InverseProblem& prob) {
  const Matrix& a = prob.forward.matrix();
  const Matrix ar = (a * ens.matrix()).colwise() - a * truth;
  return split_against(ar, basis0, prob.noise.gamma);
}

Matrix mapped_deviations(const Ensemble& ens, const InverseProblem& prob) {
  return prob.forward.matrix() * deviations(ens.matrix());
}

SpanReport check_maximal_dimension(const Ensemble& ens, const InverseProblem& prob) {
  const Matrix wae = prob.noise.gamma.whiten(mapped_deviations(ens, prob));
  Eigen::JacobiSVD<Matrix> svd(wae);
  const Vector& sv = svd.singularValues();
  SpanReport rep;
  rep.maximal = std::min<Index>(ens.size() - 1, prob.data.size());
  if (sv.size() && sv[0] > 0.0)
    for (Index i = 0; i < sv.size(); ++i)
      if (sv[i] > 1e-10 * sv[0]) ++rep.dimension;
  return rep;
}

double loglog_slope(const std::vector<double>& t, const std::vector<double>& values, double t_lo,
                    double t_hi) {
  if (t.size() != values.size()) throw DimensionError("time and value series differ in length");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_lo || t[i] > t_hi) continue;
    if (!(values[i] > 0.0) || !(t[i] > 0.0))
      throw Error("collapse rate fit needs positive values and times in the window");
    const double x = std::log(t[i]);
    const double y = std::log(values[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) throw Error("collapse rate fit needs at least two points in the window");
  const double dn = static_cast<double>(n);
  const double denom = dn * sxx - sx * sx;
  if (denom == 0.0) throw Error("collapse rate fit window has a single distinct time");
  return (dn * sxy - sx * sy) / denom;
}

double collapse_rate_fit(const Trajectory& traj, double t_lo, double t_hi,
                         const std::string& column) {
  return loglog_slope(traj.times, traj.diagnostics.column(column), t_lo, t_hi);
}

}  // namespace eki
