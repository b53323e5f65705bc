#pragma once

// Continuous-time limit of the EnKF. The general (possibly stochastic) system
//
//   du_j/dt = C^up(u) Gamma^{-1} (y - G(u_j)) + C^up(u) Gamma^{-1} sqrt(Sigma) dW_j/dt
//
// reduces for linear G = A and Sigma = 0 to the preconditioned gradient flow
//
//   du_j/dt = -C(u) D_u Phi(u_j; y).

#include "eki/core.hpp"
#include "eki/trajectory.hpp"

#include <cstdint>
#include <functional>

namespace eki {

enum class FlowScheme { EulerMaruyama, Heun };

struct FlowConfig {
  double t_end = 1.0;
  double dt = 1e-3;
  FlowScheme scheme = FlowScheme::EulerMaruyama;
  int record_every = 1;
  /// Keep every recorded ensemble; otherwise only the initial and final.
  bool store_ensembles = true;
  std::uint64_t rng_seed = 0;
  /// Abort once any member's Euclidean norm exceeds this.
  double blowup_norm = 1e12;

  /// Number of uniform steps; t_end must be an integer multiple of dt.
  long n_steps() const;
  void validate() const;
};

/// Velocities (d x J) for the current ensemble. `images` are the forward
/// images of `ens`, `t` the current time.
using Drift =
    std::function<Matrix(const Ensemble& ens, const Eigen::Ref<const Matrix>& images, double t)>;

/// Deterministic part of the general SDE, from the ensemble alone.
Matrix drift_general(const Ensemble& ens, const InverseProblem& prob);

/// -C(u) A^* Gamma^{-1} (A u_j - y); requires a linear forward map.
Matrix drift_linear_gradflow(const Ensemble& ens, const InverseProblem& prob);

enum class DriftKind { General, LinearGradFlow };

Drift make_drift(DriftKind kind, const InverseProblem& prob);

/// Integrates from ens0 to cfg.t_end on a uniform grid, recording diagnostics
/// every cfg.record_every steps (plus the first and last state). With
/// prob.noise.sigma_mode == EqualGamma the Euler-Maruyama noise term
/// C^up Gamma^{-1} L dW (Gamma = L L^T) is added; Heun requires Sigma = 0.
Trajectory integrate(const InverseProblem& prob, const Ensemble& ens0, const FlowConfig& cfg,
                     const Drift& drift, const StepObserver& observer = {});

}  // namespace eki
