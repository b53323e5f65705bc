#include "eki/discrete.hpp"

#include "eki/kernels.hpp"
#include "eki/rng.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace eki {

DiscreteConfig DiscreteConfig::smc_schedule(int n_steps, bool perturb_obs, std::uint64_t seed) {
  DiscreteConfig cfg;
  cfg.n_steps = n_steps;
  cfg.step_size = 1.0 / static_cast<double>(n_steps);
  cfg.perturb_obs = perturb_obs;
  cfg.rng_seed = seed;
  return cfg;
}

void DiscreteConfig::validate() const {
  if (n_steps < 1) throw Error("discrete run needs at least one step");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw Error("step size must be positive");
  if (record_every < 1) throw Error("record_every must be positive");
}

Ensemble enkf_update(const Ensemble& ens, const InverseProblem& prob, const DiscreteConfig& cfg,
                     std::uint64_t step) {
  const Matrix images = kernels::forward_images(ens, prob.forward);
  return enkf_update(ens, images, prob, cfg, step);
}

Ensemble enkf_update(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                     const InverseProblem& prob, const DiscreteConfig& cfg, std::uint64_t step) {
  check_finite_images(images);
  const Index J = ens.size();
  const double h = cfg.step_size;

  const Matrix cpp = cov_pp(ens, images);
  const Matrix cup = cov_up(ens, images);
  const Matrix s = cpp + prob.noise.gamma.gamma() / h;
  const Eigen::LLT<Matrix> gain_llt(s);
  if (gain_llt.info() != Eigen::Success) throw NumericalError("C^pp + Gamma/h is not positive definite");

  // Innovations y + xi_j - G(u_j), one column per member. Perturbations are
  // drawn in member order from member-keyed streams.
  Matrix innovation = (-images).colwise() + prob.data;
  if (cfg.perturb_obs) {
    const double scale = 1.0 / std::sqrt(h);
    for (Index j = 0; j < J; ++j) {
      RandomStream rs(cfg.rng_seed, step, static_cast<std::uint64_t>(j), RandomStream::kObservation);
      innovation.col(j) += scale * prob.noise.gamma.colour(rs.normal_vector(prob.data.size()));
    }
  }

  Matrix next = ens.matrix() + cup * gain_llt.solve(innovation);
  for (Index j = 0; j < J; ++j)
    if (!next.col(j).allFinite())
      throw NumericalError("non-finite state after EnKF update for member " + std::to_string(j), j);
  return Ensemble(std::move(next));
}

std::optional<Vector> truth_image(const InverseProblem& prob) {
  if (!prob.truth) return std::nullopt;
  return prob.forward.evaluate(*prob.truth);
}

Trajectory run_discrete(const InverseProblem& prob, const Ensemble& ens0, const DiscreteConfig& cfg,
                        const StepObserver& observer) {
  cfg.validate();
  prob.validate();
  const auto g_truth = truth_image(prob);

  Trajectory traj;
  Ensemble ens = ens0;
  Matrix images = kernels::forward_images(ens, prob.forward);
  record_state(traj, 0.0, ens, prob, g_truth, &images);
  traj.stop_time = 0.0;
  if (observer && observer(0.0, ens)) {
    traj.stopped_early = true;
    return traj;
  }

  for (int n = 0; n < cfg.n_steps; ++n) {
    ens = enkf_update(ens, images, prob, cfg, static_cast<std::uint64_t>(n));
    images = kernels::forward_images(ens, prob.forward);
    const double t = static_cast<double>(n + 1) * cfg.step_size;
    traj.stop_time = t;
    const bool stop = observer && observer(t, ens);
    const bool last = stop || n + 1 == cfg.n_steps;
    if (last || (n + 1) % cfg.record_every == 0)
      record_state(traj, t, ens, prob, g_truth, &images, last || cfg.store_ensembles);
    if (stop) {
      traj.stopped_early = n + 1 < cfg.n_steps;
      break;
    }
  }
  return traj;
}

Matrix orthonormal_basis(const Eigen::Ref<const Matrix>& basis0) {
  if (basis0.cols() == 0) throw Error("subspace basis must be non-empty");
  Eigen::JacobiSVD<Matrix> svd(basis0, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0.0) return Matrix(basis0.rows(), 0);
  Index rank = 0;
  while (rank < sv.size() && sv[rank] > 1e-12 * sv[0]) ++rank;
  return svd.matrixU().leftCols(rank);
}

double subspace_distance(const Ensemble& ens, const Eigen::Ref<const Matrix>& basis0) {
  if (basis0.rows() != ens.dim()) throw DimensionError("basis dimension does not match ensemble");
  const Matrix q = orthonormal_basis(basis0);
  double worst = 0.0;
  for (Index j = 0; j < ens.size(); ++j) {
    const Vector u = ens.member(j);
    const double norm = u.norm();
    if (norm == 0.0) continue;
    const Vector residual = u - q * (q.transpose() * u);
    worst = std::max(worst, residual.norm() / norm);
  }
  return worst;
}

}  // namespace eki
