#pragma once

#include "eki/core.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace eki {

/// A table of named scalar columns, one row per recorded time.
class DiagnosticsTable {
 public:
  DiagnosticsTable() = default;
  explicit DiagnosticsTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  void append(std::vector<double> row);
  bool has(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
  double at(std::size_t row, const std::string& name) const;

 private:
  std::size_t index_of(const std::string& name) const;

  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

/// Per-member squared norms at one time; aggregated into the table as
/// mean/min/max over members.
struct MemberDiagnostics {
  Vector e2;      // |u_j - mean(u)|^2
  Vector ae2;     // |G(u_j) - mean(G)|_Gamma^2
  Vector r2;      // |u_j - u_dagger|^2           (truth only)
  Vector ar2;     // |G(u_j) - G(u_dagger)|_Gamma^2  (truth only)
  Vector phi;     // misfit Phi(u_j; y)
  Vector theta2;  // |G(u_j) - y|_Gamma^2
  double e_fro = 0.0;
  double f_fro = 0.0;
  double r_fro = 0.0;
};

/// Column names of the diagnostics table: t, then <q>_mean,<q>_min,<q>_max for
/// each per-member quantity, then E_fro,F_fro,R_fro when the truth is known.
std::vector<std::string> diagnostic_columns(bool with_truth);

/// Per-member quantities from cached forward images. `truth_image` is
/// G(u_dagger); both truth arguments must be present together.
MemberDiagnostics member_diagnostics(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                                     const InverseProblem& prob,
                                     const std::optional<Vector>& truth_image);

std::vector<double> diagnostic_row(double t, const MemberDiagnostics& md, bool with_truth);

/// Time-stamped ensembles and their diagnostics.
struct Trajectory {
  std::vector<double> times;
  std::vector<Ensemble> ensembles;
  DiagnosticsTable diagnostics;
  /// Time at which the run stopped and whether a stop rule fired before the
  /// configured end.
  double stop_time = 0.0;
  bool stopped_early = false;

  /// Last stored ensemble; runs that skip storage still keep their final state.
  const Ensemble& final_ensemble() const { return ensembles.back(); }
};

/// Called after every step with the current time and ensemble. Returning
/// true halts the run after the current state has been recorded.
using StepObserver = std::function<bool(double t, const Ensemble& ens)>;

/// Records diagnostics for (t, ens) into the trajectory, computing forward
/// images if `images` is empty.
/// The ensemble itself is kept only when `keep_ensemble` is set.
void record_state(Trajectory& traj, double t, const Ensemble& ens, const InverseProblem& prob,
                  const std::optional<Vector>& truth_image, const Matrix* images = nullptr,
                  bool keep_ensemble = true);

}  // namespace eki
