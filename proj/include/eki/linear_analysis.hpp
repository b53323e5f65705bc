#pragma once

// Linear-case analysis of the EnKF gradient flow: the J x J Gram matrices of
// mapped deviations and residuals, their matrix ODEs, closed-form solutions,
// and the splitting of mapped residuals into a decaying part inside
// span{A e_j(0)} and a constant Gamma-orthogonal remainder.

#include "eki/core.hpp"
#include "eki/trajectory.hpp"

#include <utility>
#include <vector>

namespace eki {

/// E_lj = <A e_l, A e_j>_Gamma, F_lj = <A r_l, A e_j>_Gamma,
/// R_lj = <A r_l, A r_j>_Gamma with e_j = u_j - mean(u), r_j = u_j - u_dagger.
struct DeviationMatrices {
  Matrix E;
  Matrix F;
  Matrix R;
};

struct MatrixRates {
  Matrix dE;
  Matrix dF;
  Matrix dR;
};

/// Eigendecomposition E(0) = X diag(lambda0) X^T, eigenvalues descending.
/// Eigenvalues below 1e-12 lambda_max are stored as exact zeros.
struct SpectralE {
  Matrix X;
  Vector lambda0;

  static SpectralE from(const Matrix& e0);
  /// Number of nonzero eigenvalues.
  Index rank() const;
};

struct ResidualSplit {
  Vector parallel;
  Vector perp;
};

DeviationMatrices deviation_matrices(const Ensemble& ens, const Vector& truth,
                                     const InverseProblem& prob);

/// Same matrices from mapped deviations/residuals computed elsewhere:
/// `images` = A u_j columns, `truth_image` = A u_dagger.
DeviationMatrices deviation_matrices_from_images(const Eigen::Ref<const Matrix>& images,
                                                 const Vector& truth_image,
                                                 const GammaWeight& gamma);

/// dE/dt = -(2/J) E^2, dF/dt = -(2/J) F E, dR/dt = -(2/J) F F^T.
MatrixRates matrix_ode_rhs(const DeviationMatrices& dm, Index J);

/// X diag(lambda(t)) X^T with lambda(t) = (2t/J + 1/lambda0)^{-1}, 0 for lambda0 = 0.
Matrix analytic_E(const SpectralE& spec, double t, Index J);

/// X diag(omega(t)) X^T with omega(t) = (2 lambda0 t / J + 1)^{-1/2}; expresses
/// A e_j(t) in the basis A e_k(0).
Matrix analytic_L(const SpectralE& spec, double t, Index J);

/// Gamma-orthogonal projection of each A r_j onto span(basis0) (K x J, the
/// A e_j(0)) and its complement. Rank-deficient bases use the pseudo-inverse
/// of the Gram matrix with cutoff 1e-12 of its largest singular value.
std::vector<ResidualSplit> residual_split(const Ensemble& ens, const Vector& truth,
                                          const Eigen::Ref<const Matrix>& basis0,
                                          const InverseProblem& prob);

/// Split of arbitrary observation-space vectors (columns of `vectors`).
std::vector<ResidualSplit> split_against(const Eigen::Ref<const Matrix>& vectors,
                                         const Eigen::Ref<const Matrix>& basis0,
                                         const GammaWeight& gamma);

/// A e_j(0) columns for a linear problem.
Matrix mapped_deviations(const Ensemble& ens, const InverseProblem& prob);

/// Dimension of span{A e_j} and whether it equals min(J - 1, K).
struct SpanReport {
  Index dimension = 0;
  Index maximal = 0;
  bool is_maximal() const { return dimension == maximal; }
};
SpanReport check_maximal_dimension(const Ensemble& ens, const InverseProblem& prob);

/// Least-squares slope of log(value) against log(t) over rows of `column`
/// with t in [t_lo, t_hi].
double collapse_rate_fit(const Trajectory& traj, double t_lo, double t_hi,
                         const std::string& column = "E_fro");
double loglog_slope(const std::vector<double>& t, const std::vector<double>& values, double t_lo,
                    double t_hi);

}  // namespace eki
