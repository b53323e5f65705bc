#include "eki/variants.hpp"

#include "eki/kernels.hpp"
#include "parallel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <memory>

namespace eki {

using detail::parallel_members;

// ---------------------------------------------------------------------------
// Gradients

Matrix misfit_gradients(const Ensemble& ens, const InverseProblem& prob, double fd_step) {
  if (prob.forward.is_linear()) return kernels::misfit_gradients(ens, prob);
  Matrix g(ens.dim(), ens.size());
  if (prob.forward.adjoint_apply) {
    parallel_members(ens.size(), [&](Index j) { g.col(j) = misfit_gradient(ens.member(j), prob); });
    return g;
  }
  if (!(fd_step > 0.0)) throw Error("finite-difference step must be positive");
  // Members are visited in order; each member's coordinates run in parallel.
  for (Index j = 0; j < ens.size(); ++j) {
    const Vector u = ens.member(j);
    parallel_members(u.size(), [&](Index i) {
      const double step = fd_step * std::max(1.0, std::abs(u[i]));
      Vector up = u, um = u;
      up[i] += step;
      um[i] -= step;
      g(i, j) = (misfit_phi(up, prob) - misfit_phi(um, prob)) / (2.0 * step);
    });
  }
  return g;
}

// ---------------------------------------------------------------------------
// Inflation

void InflationConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("inflation alpha must be >= 0");
  if (prior.n_modes() == 0) throw Error("inflation needs a prior with at least one mode");
}

Matrix inflated_drift(const Ensemble& ens, const InverseProblem& prob, const InflationConfig& cfg) {
  if (cfg.prior.dim() != ens.dim()) throw DimensionError("prior and ensemble differ in dimension");
  const Matrix g = misfit_gradients(ens, prob, cfg.fd_step);
  Matrix v = kernels::precondition_by_ensemble(ens, g);
  if (cfg.alpha != 0.0) v -= cfg.alpha * cfg.prior.apply(g);
  return v;
}

Drift make_inflated_drift(const InverseProblem& prob, const InflationConfig& cfg) {
  cfg.validate();
  return [&prob, &cfg](const Ensemble& ens, const Eigen::Ref<const Matrix>&, double) {
    return inflated_drift(ens, prob, cfg);
  };
}

// ---------------------------------------------------------------------------
// Localization

void LocalizationConfig::validate() const {
  if (r_exponent < 1) throw Error("localization exponent r must be >= 1");
  if (coordinates.rows() == 0 || coordinates.cols() == 0)
    throw Error("localization needs physical coordinates for the state entries");
}

LocalizationConfig LocalizationConfig::for_mesh(const Mesh1D& mesh, int r) {
  LocalizationConfig cfg;
  cfg.r_exponent = r;
  cfg.coordinates = mesh.nodes();
  return cfg;
}

LocalizationConfig LocalizationConfig::for_mesh(const Mesh2D& mesh, int r) {
  LocalizationConfig cfg;
  cfg.r_exponent = r;
  cfg.coordinates = mesh.coordinates();
  return cfg;
}

Matrix localization_kernel(const LocalizationConfig& cfg) {
  cfg.validate();
  const Index d = cfg.coordinates.rows();
  Matrix rho(d, d);
  for (Index i = 0; i < d; ++i) {
    rho(i, i) = 1.0;
    for (Index k = i + 1; k < d; ++k) {
      const double dist = (cfg.coordinates.row(i) - cfg.coordinates.row(k)).norm();
      rho(i, k) = rho(k, i) = std::exp(-std::pow(dist, cfg.r_exponent));
    }
  }
  return rho;
}

Matrix localized_cov(const Matrix& cov, const LocalizationConfig& cfg) {
  if (cov.rows() != cov.cols() || cov.rows() != cfg.coordinates.rows())
    throw DimensionError("covariance must be square and indexed by the localization coordinates");
  return cov.cwiseProduct(localization_kernel(cfg));
}

namespace {

Matrix localized_drift_with(const Ensemble& ens, const InverseProblem& prob, const Matrix& rho,
                            double fd_step) {
  if (rho.rows() != ens.dim()) throw DimensionError("localization kernel and ensemble differ");
  const Matrix c_loc = empirical_cov(ens).cwiseProduct(rho);
  return -c_loc * misfit_gradients(ens, prob, fd_step);
}

}  // namespace

Matrix localized_drift(const Ensemble& ens, const InverseProblem& prob,
                       const LocalizationConfig& cfg) {
  return localized_drift_with(ens, prob, localization_kernel(cfg), cfg.fd_step);
}

Drift make_localized_drift(const InverseProblem& prob, const LocalizationConfig& cfg) {
  auto rho = std::make_shared<const Matrix>(localization_kernel(cfg));
  const double fd_step = cfg.fd_step;
  return [&prob, rho, fd_step](const Ensemble& ens, const Eigen::Ref<const Matrix>&, double) {
    return localized_drift_with(ens, prob, *rho, fd_step);
  };
}

// ---------------------------------------------------------------------------
// pCN and discrete randomized search

void PcnConfig::validate() const {
  if (!(beta_pcn > 0.0 && beta_pcn <= 1.0)) throw Error("beta_pcn must lie in (0, 1]");
  if (prior.n_modes() == 0) throw Error("pCN needs a prior with at least one mode");
}

PcnResult pcn_step(const Vector& u, const std::function<double(const Vector&)>& phi, long n,
                   double h, const PcnConfig& cfg, RandomStream& rng) {
  cfg.validate();
  if (u.size() != cfg.prior.dim()) throw DimensionError("state and prior differ in dimension");
  const double beta = cfg.beta_pcn;
  PcnResult res;
  res.proposal = std::sqrt(1.0 - beta * beta) * u +
                 beta * cfg.prior.colour(rng.normal_vector(cfg.prior.n_modes()));
  const double tempering = static_cast<double>(n) * h;
  const double log_a = tempering == 0.0 ? 0.0 : tempering * (phi(u) - phi(res.proposal));
  res.accept_prob = log_a >= 0.0 ? 1.0 : std::exp(log_a);
  res.uniform = rng.uniform();
  res.accepted = res.uniform < res.accept_prob;
  res.state = res.accepted ? res.proposal : u;
  return res;
}

Trajectory randomized_search_run(const InverseProblem& prob, const Ensemble& ens0,
                                 const DiscreteConfig& cfg, const PcnConfig& pcn,
                                 const StepObserver& observer) {
  cfg.validate();
  pcn.validate();
  prob.validate();
  const auto g_truth = truth_image(prob);
  const auto phi = [&prob](const Vector& v) { return misfit_phi(v, prob); };

  Trajectory traj;
  Ensemble ens = ens0;
  record_state(traj, 0.0, ens, prob, g_truth);
  if (observer && observer(0.0, ens)) {
    traj.stopped_early = true;
    return traj;
  }
  for (int n = 0; n < cfg.n_steps; ++n) {
    Matrix mixed(ens.dim(), ens.size());
    parallel_members(ens.size(), [&](Index j) {
      RandomStream rs(pcn.rng_seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(j),
                      RandomStream::kProposal);
      mixed.col(j) = pcn_step(ens.member(j), phi, n, cfg.step_size, pcn, rs).state;
    });
    ens = enkf_update(Ensemble(std::move(mixed)), prob, cfg, static_cast<std::uint64_t>(n));
    const double t = static_cast<double>(n + 1) * cfg.step_size;
    traj.stop_time = t;
    const bool stop = observer && observer(t, ens);
    const bool last = stop || n + 1 == cfg.n_steps;
    if (last || (n + 1) % cfg.record_every == 0)
      record_state(traj, t, ens, prob, g_truth, nullptr, last || cfg.store_ensembles);
    if (stop) {
      traj.stopped_early = n + 1 < cfg.n_steps;
      break;
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Diffusion limit

long DiffusionLimitConfig::n_steps() const { return std::lround(t_end / h); }

void DiffusionLimitConfig::validate() const {
  if (!(h > 0.0 && h < 0.5)) throw Error("diffusion-limit step h must lie in (0, 1/2)");
  if (!(t_end >= 0.0 && t_end <= 100.0)) throw Error("diffusion-limit runs are capped at T=100");
  if (std::abs(static_cast<double>(n_steps()) * h - t_end) > 1e-9 * std::max(1.0, t_end))
    throw Error("t_end must be an integer multiple of h");
  if (record_every < 1) throw Error("record_every must be positive");
}

namespace {

struct LinearPieces {
  Matrix at;        // A^T (d x K)
  Matrix v;         // Gamma^{-1} A (K x d)
  Matrix c0_at;     // C0 A^T (d x K)
  Vector gamma_y;   // Gamma^{-1} y
};

LinearPieces linear_pieces(const InverseProblem& prob, const PriorSpec& prior) {
  if (!prob.forward.is_linear()) throw Error("the diffusion-limit scheme needs a linear forward map");
  const Matrix& a = prob.forward.matrix();
  if (prior.dim() != a.cols()) throw DimensionError("prior and forward map differ in dimension");
  LinearPieces lp;
  lp.at = a.transpose();
  lp.v = prob.noise.gamma.solve(a);
  lp.c0_at = prior.apply(lp.at);
  lp.gamma_y = prob.noise.gamma.solve(prob.data);
  return lp;
}

// h (C(u~) + t C0) A^T, with C(u~) applied through its deviations.
Matrix woodbury_u(const Ensemble& ens_tilde, const LinearPieces& lp, double t, double h) {
  const Matrix du = deviations(ens_tilde.matrix());
  const double inv_j = 1.0 / static_cast<double>(ens_tilde.size());
  Matrix u = du * (du.transpose() * lp.at) * inv_j;
  if (t != 0.0) u += t * lp.c0_at;
  return h * u;
}

Ensemble contract_and_diffuse(const Ensemble& ens, long n, const PriorSpec& prior,
                              const DiffusionLimitConfig& cfg) {
  Matrix tilde = std::sqrt(1.0 - 2.0 * cfg.h) * ens.matrix();
  if (cfg.noise) {
    const double scale = std::sqrt(2.0 * cfg.h);
    for (Index j = 0; j < ens.size(); ++j) {
      RandomStream rs(cfg.rng_seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(j),
                      RandomStream::kDiffusion);
      tilde.col(j) += scale * prior.colour(rs.normal_vector(prior.n_modes()));
    }
  }
  return Ensemble(std::move(tilde));
}

Ensemble implicit_solve(const Ensemble& tilde, const LinearPieces& lp, long n, double h) {
  const double t = static_cast<double>(n) * h;
  const Matrix u = woodbury_u(tilde, lp, t, h);
  // b = u~ + U Gamma^{-1} y;  K^{-1} b = b - U (I + V U)^{-1} V b.
  const Matrix b = tilde.matrix().colwise() + u * lp.gamma_y;
  const Index k = lp.v.rows();
  const Matrix small = Matrix::Identity(k, k) + lp.v * u;
  const Eigen::PartialPivLU<Matrix> lu(small);
  Matrix next = b - u * lu.solve(lp.v * b);
  if (!next.allFinite()) throw NumericalError("non-finite state in the diffusion-limit step", -1, t);
  return Ensemble(std::move(next));
}

}  // namespace

Matrix diffusion_limit_operator(const Ensemble& ens_tilde, const InverseProblem& prob, long n,
                                double h, const PriorSpec& prior) {
  const LinearPieces lp = linear_pieces(prob, prior);
  const Matrix u = woodbury_u(ens_tilde, lp, static_cast<double>(n) * h, h);
  return Matrix::Identity(ens_tilde.dim(), ens_tilde.dim()) + u * lp.v;
}

Ensemble diffusion_limit_step(const Ensemble& ens, const InverseProblem& prob, long n,
                              const PriorSpec& prior, const DiffusionLimitConfig& cfg) {
  if (!(cfg.h > 0.0 && cfg.h < 0.5)) throw Error("diffusion-limit step h must lie in (0, 1/2)");
  const LinearPieces lp = linear_pieces(prob, prior);
  return implicit_solve(contract_and_diffuse(ens, n, prior, cfg), lp, n, cfg.h);
}

Trajectory diffusion_limit_run(const InverseProblem& prob, const Ensemble& ens0,
                               const PriorSpec& prior, const DiffusionLimitConfig& cfg,
                               const StepObserver& observer) {
  cfg.validate();
  prob.validate();
  const LinearPieces lp = linear_pieces(prob, prior);
  const auto g_truth = truth_image(prob);
  const long n_steps = cfg.n_steps();

  Trajectory traj;
  Ensemble ens = ens0;
  record_state(traj, 0.0, ens, prob, g_truth);
  if (observer && observer(0.0, ens)) {
    traj.stopped_early = n_steps > 0;
    return traj;
  }
  for (long n = 0; n < n_steps; ++n) {
    ens = implicit_solve(contract_and_diffuse(ens, n, prior, cfg), lp, n, cfg.h);
    const double t = static_cast<double>(n + 1) * cfg.h;
    traj.stop_time = t;
    const bool stop = observer && observer(t, ens);
    const bool last = stop || n + 1 == n_steps;
    if (last || (n + 1) % cfg.record_every == 0)
      record_state(traj, t, ens, prob, g_truth, nullptr, last || cfg.store_ensembles);
    if (stop) {
      traj.stopped_early = n + 1 < n_steps;
      break;
    }
  }
  return traj;
}

}  // namespace eki
