#pragma once

// Discrete-time EnKF iteration for inverse problems:
//
//   u_{n+1}^j = u_n^j + C^up (C^pp + h^{-1} Gamma)^{-1} (y + xi_{n+1}^j - G(u_n^j))
//
// with xi == 0 or xi ~ N(0, h^{-1} Gamma) (perturbed observations).

#include "eki/core.hpp"
#include "eki/trajectory.hpp"

#include <cstdint>
#include <optional>

namespace eki {

struct DiscreteConfig {
  int n_steps = 1;
  double step_size = 1.0;  // h
  /// Draw xi ~ N(0, h^{-1} Gamma) per member and step (Sigma = Gamma).
  bool perturb_obs = false;
  std::uint64_t rng_seed = 0;
  /// Diagnostic stride; the initial and final states are always recorded.
  int record_every = 1;
  /// Keep every recorded ensemble; otherwise only the initial and final.
  bool store_ensembles = true;

  /// N steps with h = 1/N, the schedule that reaches the t = 1 endpoint.
  static DiscreteConfig smc_schedule(int n_steps, bool perturb_obs = false,
                                     std::uint64_t seed = 0);
  void validate() const;
};

/// One EnKF step. `step` keys the observation-perturbation draws so that
/// member j of step n always sees the same xi.
Ensemble enkf_update(const Ensemble& ens, const InverseProblem& prob, const DiscreteConfig& cfg,
                     std::uint64_t step);

/// As above with forward images already computed for `ens`.
Ensemble enkf_update(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                     const InverseProblem& prob, const DiscreteConfig& cfg, std::uint64_t step);

/// Runs cfg.n_steps updates from ens0 at times t_n = n h, recording every
/// ensemble. The observer may halt the run early.
Trajectory run_discrete(const InverseProblem& prob, const Ensemble& ens0, const DiscreteConfig& cfg,
                        const StepObserver& observer = {});

/// Largest relative norm, over members, of the component orthogonal to
/// span(basis0). Zero members count as distance 0.
double subspace_distance(const Ensemble& ens, const Eigen::Ref<const Matrix>& basis0);

/// Orthonormal basis (columns) of span(basis0), rank cut at 1e-12 of the
/// largest singular value.
Matrix orthonormal_basis(const Eigen::Ref<const Matrix>& basis0);

/// G(u_dagger) when the problem carries a truth.
std::optional<Vector> truth_image(const InverseProblem& prob);

}  // namespace eki
