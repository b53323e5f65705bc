#include "eki/flow.hpp"

#include "eki/discrete.hpp"
#include "eki/kernels.hpp"
#include "eki/rng.hpp"

#include <cmath>
#include <sstream>

namespace eki {

long FlowConfig::n_steps() const {
  if (t_end == 0.0) return 0;
  return std::lround(t_end / dt);
}

void FlowConfig::validate() const {
  if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw Error("t_end must be finite and >= 0");
  if (!(dt > 0.0)) throw Error("dt must be positive");
  if (record_every < 1) throw Error("record_every must be positive");
  if (t_end > 0.0) {
    if (dt > t_end) throw Error("dt must not exceed t_end");
    const double n = static_cast<double>(n_steps());
    if (std::abs(n * dt - t_end) > 1e-9 * t_end)
      throw Error("t_end must be an integer multiple of dt");
  }
}

Matrix drift_general(const Ensemble& ens, const InverseProblem& prob) {
  const Matrix images = kernels::forward_images(ens, prob.forward);
  check_finite_images(images);
  return kernels::enkf_drift(ens, images, prob);
}

Matrix drift_linear_gradflow(const Ensemble& ens, const InverseProblem& prob) {
  if (!prob.forward.is_linear()) throw Error("gradient-flow drift needs a linear forward map");
  return kernels::precondition_by_ensemble(ens, kernels::misfit_gradients(ens, prob));
}

Drift make_drift(DriftKind kind, const InverseProblem& prob) {
  switch (kind) {
    case DriftKind::General:
      return [&prob](const Ensemble& ens, const Eigen::Ref<const Matrix>& images, double) {
        return kernels::enkf_drift(ens, images, prob);
      };
    case DriftKind::LinearGradFlow:
      if (!prob.forward.is_linear()) throw Error("gradient-flow drift needs a linear forward map");
      return [&prob](const Ensemble& ens, const Eigen::Ref<const Matrix>&, double) {
        return drift_linear_gradflow(ens, prob);
      };
  }
  throw Error("unknown drift kind");
}

namespace {

void guard(const Ensemble& ens, double t, double limit) {
  for (Index j = 0; j < ens.size(); ++j) {
    const double norm = ens.member(j).norm();
    if (!std::isfinite(norm) || norm > limit) {
      std::ostringstream msg;
      msg << "blow-up guard: member " << j << " has norm " << norm << " at t=" << t;
      throw NumericalError(msg.str(), j, t);
    }
  }
}

// C^up Gamma^{-1} L zeta_j sqrt(dt) for every member, Gamma = L L^T.
Matrix noise_increment(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                       const InverseProblem& prob, double dt, std::uint64_t seed, long step) {
  const Index J = ens.size();
  const Index K = prob.data.size();
  Matrix zeta(K, J);
  for (Index j = 0; j < J; ++j) {
    RandomStream rs(seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(j),
                    RandomStream::kDiffusion);
    zeta.col(j) = prob.noise.gamma.colour(rs.normal_vector(K));
  }
  return cov_up(ens, images) * prob.noise.gamma.solve(zeta) * std::sqrt(dt);
}

}  // namespace

Trajectory integrate(const InverseProblem& prob, const Ensemble& ens0, const FlowConfig& cfg,
                     const Drift& drift, const StepObserver& observer) {
  cfg.validate();
  prob.validate();
  const bool stochastic = prob.noise.sigma_mode == SigmaMode::EqualGamma;
  if (stochastic && cfg.scheme != FlowScheme::EulerMaruyama)
    throw Error("stochastic flow (Sigma = Gamma) requires the Euler-Maruyama scheme");

  const auto g_truth = truth_image(prob);
  const long n_steps = cfg.n_steps();

  Trajectory traj;
  Ensemble ens = ens0;
  Matrix images = kernels::forward_images(ens, prob.forward);
  check_finite_images(images, 0.0);
  record_state(traj, 0.0, ens, prob, g_truth, &images);
  traj.stop_time = 0.0;
  if (observer && observer(0.0, ens)) {
    traj.stopped_early = n_steps > 0;
    return traj;
  }

  for (long n = 0; n < n_steps; ++n) {
    const double t = static_cast<double>(n) * cfg.dt;
    const double t_next = static_cast<double>(n + 1) * cfg.dt;
    const Matrix v0 = drift(ens, images, t);

    Matrix next;
    if (cfg.scheme == FlowScheme::Heun) {
      const Ensemble predictor(ens.matrix() + cfg.dt * v0);
      const Matrix pred_images = kernels::forward_images(predictor, prob.forward);
      check_finite_images(pred_images, t_next);
      const Matrix v1 = drift(predictor, pred_images, t_next);
      next = ens.matrix() + 0.5 * cfg.dt * (v0 + v1);
    } else {
      next = ens.matrix() + cfg.dt * v0;
      if (stochastic) next += noise_increment(ens, images, prob, cfg.dt, cfg.rng_seed, n);
    }

    ens = Ensemble(std::move(next));
    guard(ens, t_next, cfg.blowup_norm);
    images = kernels::forward_images(ens, prob.forward);
    check_finite_images(images, t_next);

    traj.stop_time = t_next;
    const bool stop = observer && observer(t_next, ens);
    const bool last = stop || n + 1 == n_steps;
    if (last || (n + 1) % cfg.record_every == 0)
      record_state(traj, t_next, ens, prob, g_truth, &images, last || cfg.store_ensembles);
    if (stop) {
      traj.stopped_early = n + 1 < n_steps;
      break;
    }
  }
  return traj;
}

}  // namespace eki
