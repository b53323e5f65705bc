#pragma once

// Ensemble and inverse-problem data model plus the elementary statistical
// operators (means, empirical covariances, misfits) shared by every
// algorithm in the library.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace eki {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Raised when an iteration produces non-finite values or blows up.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, Index member = -1, double time = -1.0)
      : Error(what), member_(member), time_(time) {}
  Index member() const { return member_; }
  double time() const { return time_; }

 private:
  Index member_;
  double time_;
};

// ---------------------------------------------------------------------------
// Ensemble

/// J particles of dimension d, stored column-wise in a d x J matrix.
class Ensemble {
 public:
  Ensemble() = default;
  explicit Ensemble(Matrix members);
  explicit Ensemble(const std::vector<Vector>& members);

  Index size() const { return members_.cols(); }
  Index dim() const { return members_.rows(); }

  auto member(Index j) const { return members_.col(j); }
  auto member(Index j) { return members_.col(j); }

  const Matrix& matrix() const { return members_; }
  Matrix& matrix() { return members_; }

  std::vector<Vector> to_vectors() const;

 private:
  Matrix members_;
};

// ---------------------------------------------------------------------------
// Noise model

enum class SigmaMode { Zero, EqualGamma };

/// Gamma-weighted geometry of observation space. Holds the Cholesky factor
/// Gamma = L L^T, computed once.
class GammaWeight {
 public:
  GammaWeight() = default;
  explicit GammaWeight(const Matrix& gamma);

  Index dim() const { return gamma_.rows(); }
  const Matrix& gamma() const { return gamma_; }
  /// Lower Cholesky factor L.
  Matrix factor() const { return llt_.matrixL(); }

  /// L^{-1} v, so that <a, b>_Gamma = whiten(a) . whiten(b).
  template <class Derived>
  typename Derived::PlainObject whiten(const Eigen::MatrixBase<Derived>& m) const {
    return llt_.matrixL().solve(m.eval());
  }
  /// Gamma^{-1} v.
  template <class Derived>
  typename Derived::PlainObject solve(const Eigen::MatrixBase<Derived>& m) const {
    return llt_.solve(m.eval());
  }
  /// L v (colours a standard normal vector).
  Vector colour(const Eigen::Ref<const Vector>& v) const;

  double inner(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) const;
  double norm_sq(const Eigen::Ref<const Vector>& a) const;

 private:
  Matrix gamma_;
  Eigen::LLT<Matrix> llt_;
};

struct NoiseModel {
  GammaWeight gamma;
  SigmaMode sigma_mode = SigmaMode::Zero;

  static NoiseModel identity(Index k, SigmaMode mode = SigmaMode::Zero);
  static NoiseModel from_matrix(const Matrix& gamma, SigmaMode mode = SigmaMode::Zero);
};

// ---------------------------------------------------------------------------
// Forward map and problem

struct ForwardMap {
  using Evaluate = std::function<Vector(const Vector&)>;

  Index input_dim = 0;
  Index output_dim = 0;
  Evaluate evaluate;
  /// Present iff the map is linear: evaluate(u) == linear_matrix * u.
  std::optional<Matrix> linear_matrix;
  /// A^*; only needed by gradient-based variants.
  Evaluate adjoint_apply;

  bool is_linear() const { return linear_matrix.has_value(); }
  const Matrix& matrix() const;

  static ForwardMap from_matrix(Matrix a);
};

struct InverseProblem {
  ForwardMap forward;
  Vector data;
  NoiseModel noise;
  std::optional<Vector> truth;

  /// Checks the data dimension against the forward output and Gamma.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Statistical operators. All covariances divide by J.

Vector ensemble_mean(const Ensemble& ens);

/// Member deviations from the ensemble mean, as a d x J matrix.
Matrix deviations(const Eigen::Ref<const Matrix>& columns);

/// Forward images of every member, one column per member (K x J).
Matrix forward_images(const Ensemble& ens, const ForwardMap& forward);

Matrix cov_pp(const Ensemble& ens, const Eigen::Ref<const Matrix>& g_evals);
Matrix cov_up(const Ensemble& ens, const Eigen::Ref<const Matrix>& g_evals);
Matrix empirical_cov(const Ensemble& ens);

double misfit_phi(const Vector& u, const InverseProblem& prob);
/// Misfit from an already computed forward image g = G(u).
double misfit_phi_from_image(const Vector& g, const InverseProblem& prob);

/// theta = G(u) - y_dagger.
Vector misfit_theta(const Vector& u, const Vector& y_dagger, const ForwardMap& forward);

/// D_u Phi = A^* Gamma^{-1} (G(u) - y); needs a linear map or an adjoint.
Vector misfit_gradient(const Vector& u, const InverseProblem& prob);

/// Throws NumericalError naming the first member whose image has
/// non-finite entries.
void check_finite_images(const Eigen::Ref<const Matrix>& g_evals, double time = -1.0);

}  // namespace eki
