#pragma once

// Declarative experiments: a TOML configuration selects the problem, the
// initial ensemble, the algorithm, the data noise, the integrator and the
// stopping rule. run_experiment executes it and emit_outputs writes the
// diagnostics CSV, the verbatim config snapshot, SVG plots and a run summary.

#include "eki/core.hpp"
#include "eki/forward_models.hpp"
#include "eki/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace eki {

enum class ProblemKind { Linear1D, Nonlinear2D };
enum class InitKind { KL, AdaptiveResidual, AdaptiveMisfit };
enum class AlgorithmKind { Discrete, Flow, Inflation, Localization, RandomizedSearch };
enum class RandomizedScheme { DiffusionLimit, Discrete };
enum class StoppingKind { FixedT, Bayesian, Discrepancy };

/// Configuration errors: unknown keys, bad values or inconsistent choices.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ExperimentConfig {
  std::string name = "experiment";

  struct Problem {
    ProblemKind kind = ProblemKind::Linear1D;
    int n_cells = 0;         // 0 selects 256 (1-D) or 32 (2-D)
    Index n_obs = 15;        // 1-D observation count
    Index obs_per_side = 7;  // 2-D observation grid
    double beta = 10.0;      // 1-D prior scale
    double source = 100.0;   // 2-D source term
    Index n_modes = 200;     // 2-D prior modes
    std::uint64_t truth_seed = 1;
  } problem;

  struct EnsembleSpec {
    Index size = 5;
    InitKind init = InitKind::KL;
    std::uint64_t seed = 1;
    /// Adaptive coefficients alpha_1..alpha_J; empty selects (0, 1, ..., 1).
    std::vector<double> alphas;
  } ensemble;

  struct Algorithm {
    AlgorithmKind kind = AlgorithmKind::Flow;
    /// Flow drift: "general" (ensemble form) or "gradient" (linear only).
    bool gradient_drift = false;
    /// Sigma = Gamma: perturbed observations (discrete) or EM noise (flow).
    bool sigma_gamma = false;
    double inflation_alpha = 0.01;
    int localization_r = 2;
    RandomizedScheme randomized = RandomizedScheme::DiffusionLimit;
    double beta_pcn = 0.1;
  } algorithm;

  struct Noise {
    double gamma_std = 0.0;  // 0 is noise-free
    std::uint64_t seed = 2;
  } noise;

  struct Integrator {
    double dt = 1e-2;        // flow step
    bool heun = false;
    double h = 1.0 / 256.0;  // discrete / diffusion-limit step
    int record_every = 1;
    std::uint64_t seed = 0;
  } integrator;

  struct Stopping {
    StoppingKind kind = StoppingKind::FixedT;
    double t_end = 1.0;
    double tau_factor = 1.0;
    double cap = 1000.0;
  } stopping;

  /// Verbatim configuration text (the snapshot written with the outputs).
  std::string source_text;

  /// Throws ConfigError on an inconsistent combination.
  void validate() const;
  /// Final time the run integrates to (before any stopping rule fires).
  double horizon() const;
};

/// Parses TOML text; unknown tables or keys are rejected.
ExperimentConfig parse_config(const std::string& toml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Preset {
  std::string name;
  std::string description;
  std::string toml;
};
const std::vector<Preset>& presets();
const Preset& find_preset(const std::string& name);

/// Bayesian stopping rule: halt at t >= 1.
bool stop_bayesian(double t);
/// Discrepancy principle: ||G(mean u) - y||_Gamma <= tau.
bool stop_discrepancy(const Ensemble& ens, const InverseProblem& prob, double tau);
/// tau = factor * sqrt(K) * gamma.
double discrepancy_tau(const ExperimentConfig& cfg);

/// Problem and initial ensemble built from a configuration.
struct ExperimentSetup {
  InverseProblem problem;
  PriorSpec prior;
  Ensemble ens0;
  Vector noise;  // realized data noise (zeros when noise-free)
  Mesh1D mesh1d;
  Mesh2D mesh2d;
};
ExperimentSetup build_setup(const ExperimentConfig& cfg);

/// Initial ensemble whose first member satisfies the adaptive construction
/// against `target` (the truth, or a least-squares solution of A u = y).
Ensemble adaptive_ensemble(const Ensemble& kl, const Vector& target, const std::vector<double>& alphas);

struct RunRecord {
  ExperimentConfig config;
  Trajectory trajectory;
  double stop_time = 0.0;
  std::string stop_reason;  // "horizon", "bayesian", "discrepancy", "cap"
  bool cap_hit = false;
  double tau = 0.0;  // discrepancy threshold (0 when unused)
  double wall_seconds = 0.0;
  Vector truth;
  Vector noise;
};

RunRecord run_experiment(const ExperimentConfig& cfg);

/// CSV text for the diagnostics table (header always present, %.17g values).
std::string diagnostics_csv(const DiagnosticsTable& table);

/// Writes diagnostics.csv, config.snapshot, run.json, truth/noise matrices and
/// one SVG per diagnostic group into `dir` (created if missing).
void emit_outputs(const RunRecord& rec, const std::filesystem::path& dir);

}  // namespace eki
