#pragma once

// Variants that break the subspace property: variance inflation,
// covariance localization, and randomized search (pCN mixing followed by an
// EnKF step, plus its continuous-time diffusion limit).

#include "eki/core.hpp"
#include "eki/discrete.hpp"
#include "eki/flow.hpp"
#include "eki/forward_models.hpp"
#include "eki/rng.hpp"
#include "eki/trajectory.hpp"

#include <cstdint>
#include <functional>

namespace eki {

// ---------------------------------------------------------------------------
// Gradients

/// Columns D_u Phi(u_j; y). Uses the linear matrix when present, then the
/// adjoint, and otherwise central differences of G with step `fd_step`
/// (one pair of forward solves per state coordinate and member).
Matrix misfit_gradients(const Ensemble& ens, const InverseProblem& prob, double fd_step = 1e-6);

// ---------------------------------------------------------------------------
// Variance inflation: du_j/dt = -(alpha C0 + C(u)) D_u Phi(u_j; y).

struct InflationConfig {
  double alpha = 0.01;
  PriorSpec prior;
  double fd_step = 1e-6;
  void validate() const;
};

Matrix inflated_drift(const Ensemble& ens, const InverseProblem& prob, const InflationConfig& cfg);
/// Drift for `integrate`; `prob` and `cfg` must outlive the returned object.
Drift make_inflated_drift(const InverseProblem& prob, const InflationConfig& cfg);

// ---------------------------------------------------------------------------
// Localization: du_j/dt = -(C(u) o rho) D_u Phi(u_j; y), rho = exp(-|x - y|^r).

struct LocalizationConfig {
  int r_exponent = 2;
  /// Physical coordinates of each state entry, one row per entry.
  Matrix coordinates;
  double fd_step = 1e-6;
  void validate() const;

  static LocalizationConfig for_mesh(const Mesh1D& mesh, int r = 2);
  static LocalizationConfig for_mesh(const Mesh2D& mesh, int r = 2);
};

/// rho(x_i, x_j) for all pairs of state coordinates.
Matrix localization_kernel(const LocalizationConfig& cfg);
/// Entrywise product cov o rho.
Matrix localized_cov(const Matrix& cov, const LocalizationConfig& cfg);

Matrix localized_drift(const Ensemble& ens, const InverseProblem& prob,
                       const LocalizationConfig& cfg);
/// The kernel matrix is computed once and shared by every call.
Drift make_localized_drift(const InverseProblem& prob, const LocalizationConfig& cfg);

// ---------------------------------------------------------------------------
// pCN

struct PcnConfig {
  double beta_pcn = 0.1;
  PriorSpec prior;
  std::uint64_t rng_seed = 0;
  void validate() const;
};

struct PcnResult {
  Vector state;     // v if accepted, else u
  Vector proposal;  // v
  bool accepted = false;
  double accept_prob = 1.0;
  double uniform = 0.0;  // the draw compared against accept_prob
};

/// One pCN step for the tempered target exp(-n h Phi) N(0, C0):
/// v = sqrt(1 - beta^2) u + beta iota, iota ~ N(0, C0), accepted with
/// probability min{1, exp(n h Phi(u) - n h Phi(v))}. The proposal and the
/// uniform draw both come from `rng`.
PcnResult pcn_step(const Vector& u, const std::function<double(const Vector&)>& phi, long n,
                   double h, const PcnConfig& cfg, RandomStream& rng);

/// Discrete randomized search: each step mixes every member with one pCN
/// step (member-keyed streams), then applies the EnKF update.
Trajectory randomized_search_run(const InverseProblem& prob, const Ensemble& ens0,
                                 const DiscreteConfig& cfg, const PcnConfig& pcn,
                                 const StepObserver& observer = {});

// ---------------------------------------------------------------------------
// Diffusion limit of randomized search for linear G = A, integrated by
//   u~ = sqrt(1 - 2h) u_n + sqrt(2h C0) zeta_n
//   K u_{n+1} = u~ + h (C(u~) + n h C0) A^* Gamma^{-1} y,
//   K = I + h (C(u~) + n h C0) A^* Gamma^{-1} A.

struct DiffusionLimitConfig {
  double h = 1.0 / 256.0;
  double t_end = 100.0;
  /// Include the sqrt(2h C0) zeta term.
  bool noise = true;
  std::uint64_t rng_seed = 0;
  int record_every = 256;
  bool store_ensembles = false;
  long n_steps() const;
  void validate() const;
};

/// Step n -> n + 1 (time n h -> (n + 1) h). K is inverted through the
/// Woodbury identity on the K x K observation space.
Ensemble diffusion_limit_step(const Ensemble& ens, const InverseProblem& prob, long n,
                              const PriorSpec& prior, const DiffusionLimitConfig& cfg);

/// The dense operator K for a given u~ (used to check invertibility).
Matrix diffusion_limit_operator(const Ensemble& ens_tilde, const InverseProblem& prob, long n,
                                double h, const PriorSpec& prior);

/// Integrates to cfg.t_end (at most 100).
Trajectory diffusion_limit_run(const InverseProblem& prob, const Ensemble& ens0,
                               const PriorSpec& prior, const DiffusionLimitConfig& cfg,
                               const StepObserver& observer = {});

}  // namespace eki
