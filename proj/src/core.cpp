#include "eki/core.hpp"

#include <sstream>

namespace eki {

Ensemble::Ensemble(Matrix members) : members_(std::move(members)) {
  if (members_.cols() < 1) throw DimensionError("ensemble needs at least one member");
}

Ensemble::Ensemble(const std::vector<Vector>& members) {
  if (members.empty()) throw DimensionError("ensemble needs at least one member");
  const Index d = members.front().size();
  members_.resize(d, static_cast<Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j) {
    if (members[j].size() != d) throw DimensionError("ensemble members differ in dimension");
    members_.col(static_cast<Index>(j)) = members[j];
  }
}

std::vector<Vector> Ensemble::to_vectors() const {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(size()));
  for (Index j = 0; j < size(); ++j) out.emplace_back(members_.col(j));
  return out;
}

GammaWeight::GammaWeight(const Matrix& gamma) : gamma_(gamma) {
  if (gamma.rows() != gamma.cols() || gamma.rows() == 0)
    throw DimensionError("Gamma must be a non-empty square matrix");
  if (!gamma.isApprox(gamma.transpose(), 1e-12)) throw Error("Gamma must be symmetric");
  llt_.compute(gamma);
  if (llt_.info() != Eigen::Success) throw Error("Gamma is not positive definite");
}

Vector GammaWeight::colour(const Eigen::Ref<const Vector>& v) const {
  return llt_.matrixL() * v;
}

double GammaWeight::inner(const Eigen::Ref<const Vector>& a,
                          const Eigen::Ref<const Vector>& b) const {
  return whiten(Vector(a)).dot(whiten(Vector(b)));
}

double GammaWeight::norm_sq(const Eigen::Ref<const Vector>& a) const {
  return whiten(Vector(a)).squaredNorm();
}

NoiseModel NoiseModel::identity(Index k, SigmaMode mode) {
  return {GammaWeight(Matrix::Identity(k, k)), mode};
}

NoiseModel NoiseModel::from_matrix(const Matrix& gamma, SigmaMode mode) {
  return {GammaWeight(gamma), mode};
}

const Matrix& ForwardMap::matrix() const {
  if (!linear_matrix) throw Error("forward map is not linear");
  return *linear_matrix;
}

ForwardMap ForwardMap::from_matrix(Matrix a) {
  ForwardMap f;
  f.input_dim = a.cols();
  f.output_dim = a.rows();
  // Closures capture their own copy so the map stays valid when copied.
  f.evaluate = [a](const Vector& u) -> Vector { return a * u; };
  f.adjoint_apply = [a](const Vector& v) -> Vector { return a.transpose() * v; };
  f.linear_matrix = std::move(a);
  return f;
}

void InverseProblem::validate() const {
  if (data.size() != forward.output_dim)
    throw DimensionError("data dimension does not match forward output dimension");
  if (noise.gamma.dim() != data.size())
    throw DimensionError("Gamma dimension does not match data dimension");
  if (truth && truth->size() != forward.input_dim)
    throw DimensionError("truth dimension does not match state dimension");
}

Vector ensemble_mean(const Ensemble& ens) { return ens.matrix().rowwise().mean(); }

Matrix deviations(const Eigen::Ref<const Matrix>& columns) {
  Vector mean = columns.rowwise().mean();
  return columns.colwise() - mean;
}

Matrix forward_images(const Ensemble& ens, const ForwardMap& forward) {
  Matrix g(forward.output_dim, ens.size());
  for (Index j = 0; j < ens.size(); ++j) g.col(j) = forward.evaluate(ens.member(j));
  return g;
}

namespace {

void check_images(const Ensemble& ens, const Eigen::Ref<const Matrix>& g_evals) {
  if (g_evals.cols() != ens.size())
    throw DimensionError("need exactly one forward image per ensemble member");
}

}  // namespace

Matrix cov_pp(const Ensemble& ens, const Eigen::Ref<const Matrix>& g_evals) {
  check_images(ens, g_evals);
  const Matrix dg = deviations(g_evals);
  return dg * dg.transpose() / static_cast<double>(ens.size());
}

Matrix cov_up(const Ensemble& ens, const Eigen::Ref<const Matrix>& g_evals) {
  check_images(ens, g_evals);
  const Matrix du = deviations(ens.matrix());
  const Matrix dg = deviations(g_evals);
  return du * dg.transpose() / static_cast<double>(ens.size());
}

Matrix empirical_cov(const Ensemble& ens) {
  const Matrix du = deviations(ens.matrix());
  return du * du.transpose() / static_cast<double>(ens.size());
}

double misfit_phi_from_image(const Vector& g, const InverseProblem& prob) {
  if (g.size() != prob.data.size()) throw DimensionError("forward image has wrong dimension");
  return 0.5 * prob.noise.gamma.norm_sq(prob.data - g);
}

double misfit_phi(const Vector& u, const InverseProblem& prob) {
  return misfit_phi_from_image(prob.forward.evaluate(u), prob);
}

Vector misfit_theta(const Vector& u, const Vector& y_dagger, const ForwardMap& forward) {
  Vector g = forward.evaluate(u);
  if (g.size() != y_dagger.size()) throw DimensionError("y_dagger has wrong dimension");
  return g - y_dagger;
}

Vector misfit_gradient(const Vector& u, const InverseProblem& prob) {
  if (prob.forward.is_linear()) {
    const Matrix& a = prob.forward.matrix();
    return a.transpose() * prob.noise.gamma.solve(a * u - prob.data);
  }
  if (prob.forward.adjoint_apply)
    return prob.forward.adjoint_apply(prob.noise.gamma.solve(prob.forward.evaluate(u) - prob.data));
  throw Error("misfit gradient needs a linear forward map or an adjoint");
}

void check_finite_images(const Eigen::Ref<const Matrix>& g_evals, double time) {
  for (Index j = 0; j < g_evals.cols(); ++j) {
    if (!g_evals.col(j).allFinite()) {
      std::ostringstream msg;
      msg << "non-finite forward evaluation for ensemble member " << j;
      if (time >= 0.0) msg << " at t=" << time;
      throw NumericalError(msg.str(), j, time);
    }
  }
}

}  // namespace eki
