#include "eki/experiments.hpp"

#include "eki/discrete.hpp"
#include "eki/flow.hpp"
#include "eki/persist.hpp"
#include "eki/svg.hpp"
#include "eki/variants.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace eki {

// ---------------------------------------------------------------------------
// Parsing

namespace {

using Keys = std::set<std::string>;

void check_keys(const toml::table& tbl, const std::string& where, const Keys& allowed) {
  for (auto&& [key, node] : tbl) {
    const std::string k(key.str());
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

const toml::table* sub_table(const toml::table& root, const std::string& name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) throw ConfigError("'" + name + "' must be a table");
  return n->as_table();
}

template <class T>
void read(const toml::table* tbl, const std::string& where, const char* key, T& out) {
  if (!tbl) return;
  const toml::node* n = tbl->get(key);
  if (!n) return;
  if constexpr (std::is_same_v<T, bool>) {
    if (auto v = n->value_exact<bool>()) {
      out = *v;
      return;
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = n->value_exact<std::string>()) {
      out = *v;
      return;
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = n->value<double>()) {
      out = *v;
      return;
    }
  } else {
    if (auto v = n->value_exact<std::int64_t>()) {
      if (std::is_unsigned_v<T> && *v < 0) throw ConfigError(where + "." + key + " must be >= 0");
      out = static_cast<T>(*v);
      return;
    }
  }
  throw ConfigError(where + "." + key + " has the wrong type");
}

template <class E>
E parse_enum(const std::string& value, const std::string& where,
             std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(where + " must be one of: " + names + " (got '" + value + "')");
}

}  // namespace

ExperimentConfig parse_config(const std::string& toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML syntax error: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(msg.str());
  }
  check_keys(root, "config",
             {"name", "problem", "ensemble", "algorithm", "noise", "integrator", "stopping"});

  ExperimentConfig cfg;
  cfg.source_text = toml_text;
  if (const toml::node* n = root.get("name")) {
    auto v = n->value_exact<std::string>();
    if (!v) throw ConfigError("name must be a string");
    cfg.name = *v;
  }

  if (const auto* t = sub_table(root, "problem")) {
    check_keys(*t, "problem",
               {"kind", "n_cells", "n_obs", "obs_per_side", "beta", "source", "n_modes", "truth_seed"});
    std::string kind = "linear_1d";
    read(t, "problem", "kind", kind);
    cfg.problem.kind = parse_enum<ProblemKind>(
        kind, "problem.kind",
        {{"linear_1d", ProblemKind::Linear1D}, {"nonlinear_2d", ProblemKind::Nonlinear2D}});
    read(t, "problem", "n_cells", cfg.problem.n_cells);
    read(t, "problem", "n_obs", cfg.problem.n_obs);
    read(t, "problem", "obs_per_side", cfg.problem.obs_per_side);
    read(t, "problem", "beta", cfg.problem.beta);
    read(t, "problem", "source", cfg.problem.source);
    read(t, "problem", "n_modes", cfg.problem.n_modes);
    read(t, "problem", "truth_seed", cfg.problem.truth_seed);
  }

  if (const auto* t = sub_table(root, "ensemble")) {
    check_keys(*t, "ensemble", {"size", "init", "seed", "alphas"});
    read(t, "ensemble", "size", cfg.ensemble.size);
    std::string init = "kl";
    read(t, "ensemble", "init", init);
    cfg.ensemble.init = parse_enum<InitKind>(init, "ensemble.init",
                                             {{"kl", InitKind::KL},
                                              {"adaptive_residual", InitKind::AdaptiveResidual},
                                              {"adaptive_misfit", InitKind::AdaptiveMisfit}});
    read(t, "ensemble", "seed", cfg.ensemble.seed);
    if (const toml::node* n = t->get("alphas")) {
      const toml::array* arr = n->as_array();
      if (!arr) throw ConfigError("ensemble.alphas must be an array of numbers");
      for (const auto& el : *arr) {
        auto v = el.value<double>();
        if (!v) throw ConfigError("ensemble.alphas must be an array of numbers");
        cfg.ensemble.alphas.push_back(*v);
      }
    }
  }

  if (const auto* t = sub_table(root, "algorithm")) {
    check_keys(*t, "algorithm",
               {"kind", "drift", "sigma", "alpha", "r", "randomized_scheme", "beta_pcn"});
    std::string kind = "flow";
    read(t, "algorithm", "kind", kind);
    cfg.algorithm.kind = parse_enum<AlgorithmKind>(
        kind, "algorithm.kind",
        {{"discrete", AlgorithmKind::Discrete},
         {"flow", AlgorithmKind::Flow},
         {"inflation", AlgorithmKind::Inflation},
         {"localization", AlgorithmKind::Localization},
         {"randomized_search", AlgorithmKind::RandomizedSearch}});
    std::string drift = "general";
    read(t, "algorithm", "drift", drift);
    cfg.algorithm.gradient_drift =
        parse_enum<bool>(drift, "algorithm.drift", {{"general", false}, {"gradient", true}});
    std::string sigma = "zero";
    read(t, "algorithm", "sigma", sigma);
    cfg.algorithm.sigma_gamma =
        parse_enum<bool>(sigma, "algorithm.sigma", {{"zero", false}, {"gamma", true}});
    read(t, "algorithm", "alpha", cfg.algorithm.inflation_alpha);
    read(t, "algorithm", "r", cfg.algorithm.localization_r);
    std::string scheme = "diffusion_limit";
    read(t, "algorithm", "randomized_scheme", scheme);
    cfg.algorithm.randomized = parse_enum<RandomizedScheme>(
        scheme, "algorithm.randomized_scheme",
        {{"diffusion_limit", RandomizedScheme::DiffusionLimit}, {"discrete", RandomizedScheme::Discrete}});
    read(t, "algorithm", "beta_pcn", cfg.algorithm.beta_pcn);
  }

  if (const auto* t = sub_table(root, "noise")) {
    check_keys(*t, "noise", {"gamma_std", "seed"});
    read(t, "noise", "gamma_std", cfg.noise.gamma_std);
    read(t, "noise", "seed", cfg.noise.seed);
  }

  if (const auto* t = sub_table(root, "integrator")) {
    check_keys(*t, "integrator", {"dt", "scheme", "h", "record_every", "seed"});
    read(t, "integrator", "dt", cfg.integrator.dt);
    std::string scheme = "euler";
    read(t, "integrator", "scheme", scheme);
    cfg.integrator.heun =
        parse_enum<bool>(scheme, "integrator.scheme", {{"euler", false}, {"heun", true}});
    read(t, "integrator", "h", cfg.integrator.h);
    read(t, "integrator", "record_every", cfg.integrator.record_every);
    read(t, "integrator", "seed", cfg.integrator.seed);
  }

  if (const auto* t = sub_table(root, "stopping")) {
    check_keys(*t, "stopping", {"rule", "t_end", "tau_factor", "cap"});
    std::string rule = "fixed";
    read(t, "stopping", "rule", rule);
    cfg.stopping.kind = parse_enum<StoppingKind>(rule, "stopping.rule",
                                                 {{"fixed", StoppingKind::FixedT},
                                                  {"bayesian", StoppingKind::Bayesian},
                                                  {"discrepancy", StoppingKind::Discrepancy}});
    read(t, "stopping", "t_end", cfg.stopping.t_end);
    read(t, "stopping", "tau_factor", cfg.stopping.tau_factor);
    read(t, "stopping", "cap", cfg.stopping.cap);
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Validation

double ExperimentConfig::horizon() const {
  switch (stopping.kind) {
    case StoppingKind::FixedT: return stopping.t_end;
    case StoppingKind::Bayesian: return 1.0;
    case StoppingKind::Discrepancy: return stopping.cap;
  }
  return stopping.t_end;
}

namespace {

bool integer_multiple(double t, double step) {
  const double n = std::round(t / step);
  return n >= 1.0 && std::abs(n * step - t) <= 1e-9 * std::max(1.0, t);
}

}  // namespace

void ExperimentConfig::validate() const {
  const bool linear = problem.kind == ProblemKind::Linear1D;
  if (problem.n_cells < 0) throw ConfigError("problem.n_cells must be >= 0");
  if (problem.n_obs < 1 || problem.obs_per_side < 1) throw ConfigError("observation counts must be positive");
  if (!(problem.beta > 0.0)) throw ConfigError("problem.beta must be positive");
  if (problem.n_modes < 1) throw ConfigError("problem.n_modes must be positive");

  if (ensemble.size < 1) throw ConfigError("ensemble.size must be positive");
  if (ensemble.init != InitKind::KL && ensemble.size < 2)
    throw ConfigError("adaptive ensembles need at least two members");
  if (!ensemble.alphas.empty() && static_cast<Index>(ensemble.alphas.size()) != ensemble.size)
    throw ConfigError("ensemble.alphas needs one coefficient per member");
  if (ensemble.init == InitKind::AdaptiveMisfit && !linear)
    throw ConfigError("adaptive_misfit needs the linear problem");
  const Index available = linear ? (problem.n_cells ? problem.n_cells : 256) - 1 : problem.n_modes;
  if (ensemble.size > available)
    throw ConfigError("ensemble.size exceeds the available prior modes");

  if (noise.gamma_std < 0.0) throw ConfigError("noise.gamma_std must be >= 0");

  if (!(integrator.dt > 0.0) || !(integrator.h > 0.0)) throw ConfigError("step sizes must be positive");
  if (integrator.record_every < 1) throw ConfigError("integrator.record_every must be positive");

  switch (stopping.kind) {
    case StoppingKind::FixedT:
      if (!(stopping.t_end > 0.0)) throw ConfigError("stopping.t_end must be positive");
      break;
    case StoppingKind::Bayesian: break;
    case StoppingKind::Discrepancy:
      if (noise.gamma_std <= 0.0) throw ConfigError("the discrepancy rule needs noisy data");
      if (!(stopping.tau_factor > 0.0)) throw ConfigError("stopping.tau_factor must be positive");
      if (!(stopping.cap > 0.0)) throw ConfigError("stopping.cap must be positive");
      break;
  }

  const double t = horizon();
  const AlgorithmKind kind = algorithm.kind;
  if (algorithm.gradient_drift && !linear) throw ConfigError("the gradient drift needs the linear problem");
  if (algorithm.gradient_drift && kind != AlgorithmKind::Flow)
    throw ConfigError("algorithm.drift applies to the flow algorithm only");
  if (integrator.heun && algorithm.sigma_gamma)
    throw ConfigError("the Heun scheme requires sigma = \"zero\"");
  if (kind == AlgorithmKind::Inflation && !(algorithm.inflation_alpha >= 0.0))
    throw ConfigError("algorithm.alpha must be >= 0");
  if (kind == AlgorithmKind::Localization && algorithm.localization_r < 1)
    throw ConfigError("algorithm.r must be >= 1");

  const bool uses_h = kind == AlgorithmKind::Discrete || kind == AlgorithmKind::RandomizedSearch;
  if (uses_h) {
    if (!integer_multiple(t, integrator.h)) throw ConfigError("the horizon must be a multiple of integrator.h");
  } else if (!integer_multiple(t, integrator.dt)) {
    throw ConfigError("the horizon must be a multiple of integrator.dt");
  }
  if (kind == AlgorithmKind::RandomizedSearch) {
    if (!(algorithm.beta_pcn > 0.0 && algorithm.beta_pcn <= 1.0))
      throw ConfigError("algorithm.beta_pcn must lie in (0, 1]");
    if (algorithm.randomized == RandomizedScheme::DiffusionLimit) {
      if (!linear) throw ConfigError("the diffusion-limit scheme needs the linear problem");
      if (!(integrator.h < 0.5)) throw ConfigError("the diffusion-limit step h must be < 1/2");
      if (t > 100.0) throw ConfigError("diffusion-limit runs are capped at T=100");
    }
  }
}

// ---------------------------------------------------------------------------
// Presets

namespace {

std::string flow_preset(const std::string& name, Index j, const std::string& extra_ensemble,
                        const std::string& noise, const std::string& algorithm,
                        const std::string& stopping, double dt, int record_every) {
  std::ostringstream o;
  o << "name = \"" << name << "\"\n\n[problem]\nkind = \"linear_1d\"\n\n[ensemble]\nsize = " << j
    << "\n" << extra_ensemble << "seed = 1\n\n" << algorithm << noise << "[integrator]\ndt = " << dt
    << "\nrecord_every = " << record_every << "\n\n" << stopping;
  return o.str();
}

std::vector<Preset> make_presets() {
  const std::string flow = "[algorithm]\nkind = \"flow\"\n\n";
  const std::string noisy = "[noise]\ngamma_std = 0.01\nseed = 2\n\n";
  const std::string t100 = "[stopping]\nrule = \"fixed\"\nt_end = 100\n";
  const std::string kl = "init = \"kl\"\n";
  std::vector<Preset> p;
  for (Index j : {5, 10, 50}) {
    const std::string name = "linear-noisefree-J" + std::to_string(j);
    p.push_back({name, "noise-free 1-D flow, KL ensemble, T=100",
                 flow_preset(name, j, kl, "", flow, t100, 1e-2, 10)});
  }
  p.push_back({"linear-noisefree-adaptive-J5",
               "noise-free 1-D flow, first member built from the truth, T=100",
               flow_preset("linear-noisefree-adaptive-J5", 5, "init = \"adaptive_residual\"\n", "", flow,
                           t100, 1e-2, 10)});
  p.push_back({"linear-noisy-kl-J5", "noisy 1-D flow (gamma=0.01), KL ensemble, no stopping",
               flow_preset("linear-noisy-kl-J5", 5, kl, noisy, flow, t100, 1e-2, 10)});
  p.push_back({"linear-noisy-adaptive-J5",
               "noisy 1-D flow (gamma=0.01), first member fitted to the data, no stopping",
               flow_preset("linear-noisy-adaptive-J5", 5, "init = \"adaptive_misfit\"\n", noisy, flow,
                           t100, 1e-2, 10)});
  p.push_back({"linear-noisy-bayesian-J5", "noisy 1-D flow, KL ensemble, stopped at T=1",
               flow_preset("linear-noisy-bayesian-J5", 5, kl, noisy, flow,
                           "[stopping]\nrule = \"bayesian\"\n", 1e-3, 10)});
  p.push_back({"linear-noisy-bayesian-adaptive-J5",
               "noisy 1-D flow, first member fitted to the data, stopped at T=1",
               flow_preset("linear-noisy-bayesian-adaptive-J5", 5, "init = \"adaptive_misfit\"\n", noisy,
                           flow, "[stopping]\nrule = \"bayesian\"\n", 1e-3, 10)});
  p.push_back({"linear-noisy-discrepancy-J5",
               "noisy 1-D flow, KL ensemble, discrepancy principle tau = sqrt(K) gamma",
               flow_preset("linear-noisy-discrepancy-J5", 5, kl, noisy, flow,
                           "[stopping]\nrule = \"discrepancy\"\ntau_factor = 1.0\ncap = 1000\n", 1e-2, 10)});
  p.push_back({"linear-small-noise-J5", "1-D flow with gamma=0.001, KL ensemble, no stopping",
               flow_preset("linear-small-noise-J5", 5, kl, "[noise]\ngamma_std = 0.001\nseed = 2\n\n",
                           flow, t100, 1e-2, 10)});
  p.push_back({"linear-discrete-smc-J5",
               "discrete EnKF with perturbed observations, h=1/256 to t=1 on noisy data",
               "name = \"linear-discrete-smc-J5\"\n\n[problem]\nkind = \"linear_1d\"\n\n[ensemble]\n"
               "size = 5\ninit = \"kl\"\nseed = 1\n\n[algorithm]\nkind = \"discrete\"\nsigma = \"gamma\"\n\n"
               "[noise]\ngamma_std = 0.01\nseed = 2\n\n[integrator]\nh = 0.00390625\nrecord_every = 4\n"
               "seed = 3\n\n[stopping]\nrule = \"bayesian\"\n"});
  for (Index j : {5, 50}) {
    const std::string js = std::to_string(j);
    p.push_back({"linear-inflation-J" + js, "noise-free 1-D inflated flow, alpha=0.01, T=100",
                 flow_preset("linear-inflation-J" + js, j, kl, "",
                             "[algorithm]\nkind = \"inflation\"\nalpha = 0.01\n\n", t100, 1e-2, 10)});
    p.push_back({"linear-localization-J" + js, "noise-free 1-D localized flow, r=2, T=100",
                 flow_preset("linear-localization-J" + js, j, kl, "",
                             "[algorithm]\nkind = \"localization\"\nr = 2\n\n", t100, 1e-2, 10)});
    p.push_back({"linear-randomized-J" + js,
                 "noise-free 1-D randomized search (diffusion limit, h=2^-8), T=100",
                 "name = \"linear-randomized-J" + js + "\"\n\n[problem]\nkind = \"linear_1d\"\n\n"
                 "[ensemble]\nsize = " + js + "\ninit = \"kl\"\nseed = 1\n\n[algorithm]\n"
                 "kind = \"randomized_search\"\nrandomized_scheme = \"diffusion_limit\"\n\n"
                 "[integrator]\nh = 0.00390625\nrecord_every = 64\nseed = 4\n\n"
                 "[stopping]\nrule = \"fixed\"\nt_end = 100\n"});
    p.push_back({"nonlinear-2d-J" + js, "noise-free 2-D log-permeability flow, T=6000",
                 "name = \"nonlinear-2d-J" + js + "\"\n\n[problem]\nkind = \"nonlinear_2d\"\n\n"
                 "[ensemble]\nsize = " + js + "\ninit = \"kl\"\nseed = 1\n\n[algorithm]\nkind = \"flow\"\n\n"
                 "[integrator]\ndt = 1.0\nrecord_every = 10\n\n[stopping]\nrule = \"fixed\"\nt_end = 6000\n"});
  }
  return p;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = make_presets();
  return all;
}

const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw ConfigError("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Stopping rules

bool stop_bayesian(double t) { return t >= 1.0; }

bool stop_discrepancy(const Ensemble& ens, const InverseProblem& prob, double tau) {
  if (!(tau > 0.0)) throw Error("discrepancy threshold must be positive");
  const Vector g = prob.forward.evaluate(ensemble_mean(ens));
  return std::sqrt(prob.noise.gamma.norm_sq(g - prob.data)) <= tau;
}

double discrepancy_tau(const ExperimentConfig& cfg) {
  const Index k = cfg.problem.kind == ProblemKind::Linear1D
                      ? cfg.problem.n_obs
                      : cfg.problem.obs_per_side * cfg.problem.obs_per_side;
  return cfg.stopping.tau_factor * std::sqrt(static_cast<double>(k)) * cfg.noise.gamma_std;
}

// ---------------------------------------------------------------------------
// Setup

Ensemble adaptive_ensemble(const Ensemble& kl, const Vector& target, const std::vector<double>& alphas) {
  const Index J = kl.size();
  if (J < 2) throw Error("adaptive ensembles need at least two members");
  Vector a(J);
  if (alphas.empty()) {
    a.setOnes();
    a[0] = 0.0;
  } else {
    if (static_cast<Index>(alphas.size()) != J) throw DimensionError("need one alpha per member");
    for (Index j = 0; j < J; ++j) a[j] = alphas[static_cast<std::size_t>(j)];
  }
  Matrix m = kl.matrix();
  m.col(0) = adaptive_first_member(target, m.rightCols(J - 1), a);
  return Ensemble(std::move(m));
}

ExperimentSetup build_setup(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentSetup s;
  if (cfg.problem.kind == ProblemKind::Linear1D) {
    Linear1DOptions o;
    if (cfg.problem.n_cells) o.n_cells = cfg.problem.n_cells;
    o.n_obs = cfg.problem.n_obs;
    o.beta = cfg.problem.beta;
    o.truth_seed = cfg.problem.truth_seed;
    o.noise_std = cfg.noise.gamma_std;
    o.noise_seed = cfg.noise.seed;
    auto lin = make_linear_1d(o);
    s.problem = lin.problem;
    s.prior = lin.prior;
    s.noise = lin.noise;
    s.mesh1d = lin.mesh;
  } else {
    Nonlinear2DOptions o;
    if (cfg.problem.n_cells) o.n_cells = cfg.problem.n_cells;
    o.source = cfg.problem.source;
    o.obs_per_side = cfg.problem.obs_per_side;
    o.n_modes = cfg.problem.n_modes;
    o.truth_seed = cfg.problem.truth_seed;
    auto non = make_nonlinear_2d(o);
    s.problem = non.problem;
    s.prior = non.prior;
    s.noise = draw_noise(s.problem.data.size(), cfg.noise.gamma_std, cfg.noise.seed);
    s.problem.data += s.noise;
    s.mesh2d = non.mesh;
  }
  if (cfg.algorithm.sigma_gamma) s.problem.noise.sigma_mode = SigmaMode::EqualGamma;

  const Ensemble kl = kl_initial_ensemble(s.prior, cfg.ensemble.size, cfg.ensemble.seed);
  switch (cfg.ensemble.init) {
    case InitKind::KL: s.ens0 = kl; break;
    case InitKind::AdaptiveResidual:
      s.ens0 = adaptive_ensemble(kl, *s.problem.truth, cfg.ensemble.alphas);
      break;
    case InitKind::AdaptiveMisfit: {
      // Any u with A u = y serves; the minimum-norm one is used.
      const Matrix& a = s.problem.forward.matrix();
      const Vector target =
          a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(s.problem.data);
      s.ens0 = adaptive_ensemble(kl, target, cfg.ensemble.alphas);
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Running

RunRecord run_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentSetup s = build_setup(cfg);
  const InverseProblem& prob = s.problem;

  RunRecord rec;
  rec.config = cfg;
  rec.truth = *prob.truth;
  rec.noise = s.noise;

  StepObserver observer;
  if (cfg.stopping.kind == StoppingKind::Discrepancy) {
    rec.tau = discrepancy_tau(cfg);
    const double tau = rec.tau;
    observer = [&prob, tau](double, const Ensemble& ens) { return stop_discrepancy(ens, prob, tau); };
  }

  const double horizon = cfg.horizon();
  const AlgorithmKind kind = cfg.algorithm.kind;

  FlowConfig fc;
  fc.t_end = horizon;
  fc.dt = cfg.integrator.dt;
  fc.scheme = cfg.integrator.heun ? FlowScheme::Heun : FlowScheme::EulerMaruyama;
  fc.record_every = cfg.integrator.record_every;
  fc.rng_seed = cfg.integrator.seed;
  fc.store_ensembles = false;

  DiscreteConfig dc;
  dc.n_steps = static_cast<int>(std::lround(horizon / cfg.integrator.h));
  dc.step_size = cfg.integrator.h;
  dc.perturb_obs = cfg.algorithm.sigma_gamma;
  dc.rng_seed = cfg.integrator.seed;
  dc.record_every = cfg.integrator.record_every;
  dc.store_ensembles = false;

  InflationConfig ic;
  LocalizationConfig lc;

  switch (kind) {
    case AlgorithmKind::Flow:
      rec.trajectory = integrate(
          prob, s.ens0, fc,
          make_drift(cfg.algorithm.gradient_drift ? DriftKind::LinearGradFlow : DriftKind::General, prob),
          observer);
      break;
    case AlgorithmKind::Inflation:
      ic.alpha = cfg.algorithm.inflation_alpha;
      ic.prior = s.prior;
      rec.trajectory = integrate(prob, s.ens0, fc, make_inflated_drift(prob, ic), observer);
      break;
    case AlgorithmKind::Localization:
      lc = cfg.problem.kind == ProblemKind::Linear1D
               ? LocalizationConfig::for_mesh(s.mesh1d, cfg.algorithm.localization_r)
               : LocalizationConfig::for_mesh(s.mesh2d, cfg.algorithm.localization_r);
      rec.trajectory = integrate(prob, s.ens0, fc, make_localized_drift(prob, lc), observer);
      break;
    case AlgorithmKind::Discrete:
      rec.trajectory = run_discrete(prob, s.ens0, dc, observer);
      break;
    case AlgorithmKind::RandomizedSearch:
      if (cfg.algorithm.randomized == RandomizedScheme::DiffusionLimit) {
        DiffusionLimitConfig dl;
        dl.h = cfg.integrator.h;
        dl.t_end = horizon;
        dl.rng_seed = cfg.integrator.seed;
        dl.record_every = cfg.integrator.record_every;
        rec.trajectory = diffusion_limit_run(prob, s.ens0, s.prior, dl, observer);
      } else {
        PcnConfig pc;
        pc.beta_pcn = cfg.algorithm.beta_pcn;
        pc.prior = s.prior;
        pc.rng_seed = cfg.integrator.seed + 1;
        rec.trajectory = randomized_search_run(prob, s.ens0, dc, pc, observer);
      }
      break;
  }

  rec.stop_time = rec.trajectory.stop_time;
  switch (cfg.stopping.kind) {
    case StoppingKind::FixedT: rec.stop_reason = "horizon"; break;
    case StoppingKind::Bayesian: rec.stop_reason = "bayesian"; break;
    case StoppingKind::Discrepancy:
      if (rec.trajectory.stopped_early || stop_discrepancy(rec.trajectory.final_ensemble(), prob, rec.tau)) {
        rec.stop_reason = "discrepancy";
      } else {
        rec.stop_reason = "cap";
        rec.cap_hit = true;
      }
      break;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Output

std::string diagnostics_csv(const DiagnosticsTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.columns().size(); ++c) {
    if (c) out += ',';
    out += table.columns()[c];
  }
  out += '\n';
  char buf[32];
  for (const auto& row : table.rows()) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      if (c) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::out | std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

struct PlotGroup {
  const char* file;
  const char* title;
  std::vector<std::string> quantities;  // aggregated (mean with min/max band)
  std::vector<std::string> plain;       // single columns
};

}  // namespace

void emit_outputs(const RunRecord& rec, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());

  const DiagnosticsTable& table = rec.trajectory.diagnostics;
  write_text(dir / "diagnostics.csv", diagnostics_csv(table));
  write_text(dir / "config.snapshot", rec.config.source_text);
  if (rec.truth.size()) save_matrix_pair(dir, "truth", rec.truth);
  if (rec.noise.size()) save_matrix_pair(dir, "noise", rec.noise);

  nlohmann::ordered_json summary;
  summary["name"] = rec.config.name;
  summary["seeds"] = {{"truth", rec.config.problem.truth_seed},
                      {"ensemble", rec.config.ensemble.seed},
                      {"noise", rec.config.noise.seed},
                      {"integrator", rec.config.integrator.seed}};
  summary["stop_time"] = rec.stop_time;
  summary["stop_reason"] = rec.stop_reason;
  summary["cap_hit"] = rec.cap_hit;
  summary["tau"] = rec.tau;
  summary["rows"] = table.size();
  summary["columns"] = table.columns();
  summary["wall_seconds"] = rec.wall_seconds;
  write_text(dir / "run.json", summary.dump(2) + "\n");

  if (table.empty()) return;
  const std::vector<double> t = table.column("t");
  const std::vector<PlotGroup> groups{
      {"collapse.svg", "ensemble spread", {"e2", "Ae2"}, {}},
      {"residuals.svg", "residuals", {"r2", "Ar2"}, {}},
      {"misfit.svg", "data misfit", {"phi", "theta2"}, {}},
      {"matrices.svg", "deviation matrices (Frobenius norm)", {}, {"E_fro", "F_fro", "R_fro"}},
  };
  for (const auto& g : groups) {
    std::vector<svg::Series> series;
    for (const auto& q : g.quantities) {
      if (!table.has(q + "_mean")) continue;
      series.push_back({q, t, table.column(q + "_mean"), table.column(q + "_min"), table.column(q + "_max")});
    }
    for (const auto& q : g.plain)
      if (table.has(q)) series.push_back({q, t, table.column(q), {}, {}});
    if (series.empty()) continue;
    svg::PlotSpec spec;
    spec.title = rec.config.name + ": " + g.title;
    spec.log_x = true;
    spec.log_y = true;
    write_text(dir / g.file, svg::render(spec, series));
  }
}

}  // namespace eki
