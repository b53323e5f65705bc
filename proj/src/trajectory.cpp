#include "eki/trajectory.hpp"

#include "eki/kernels.hpp"

#include <algorithm>

namespace eki {

void DiagnosticsTable::append(std::vector<double> row) {
  if (row.size() != columns_.size()) throw DimensionError("diagnostics row has wrong width");
  rows_.push_back(std::move(row));
}

std::size_t DiagnosticsTable::index_of(const std::string& name) const {
  auto it = std::find(columns_.begin(), columns_.end(), name);
  if (it == columns_.end()) throw Error("unknown diagnostics column: " + name);
  return static_cast<std::size_t>(it - columns_.begin());
}

bool DiagnosticsTable::has(const std::string& name) const {
  return std::find(columns_.begin(), columns_.end(), name) != columns_.end();
}

std::vector<double> DiagnosticsTable::column(const std::string& name) const {
  const std::size_t c = index_of(name);
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[c]);
  return out;
}

double DiagnosticsTable::at(std::size_t row, const std::string& name) const {
  return rows_.at(row)[index_of(name)];
}

namespace {

const std::vector<std::string>& member_quantities(bool with_truth) {
  static const std::vector<std::string> all{"e2", "Ae2", "r2", "Ar2", "phi", "theta2"};
  static const std::vector<std::string> no_truth{"e2", "Ae2", "phi", "theta2"};
  return with_truth ? all : no_truth;
}

}  // namespace

std::vector<std::string> diagnostic_columns(bool with_truth) {
  std::vector<std::string> cols{"t"};
  for (const auto& q : member_quantities(with_truth))
    for (const char* agg : {"_mean", "_min", "_max"}) cols.push_back(q + agg);
  if (with_truth) {
    cols.emplace_back("E_fro");
    cols.emplace_back("F_fro");
    cols.emplace_back("R_fro");
  }
  return cols;
}

MemberDiagnostics member_diagnostics(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                                     const InverseProblem& prob,
                                     const std::optional<Vector>& truth_image) {
  const GammaWeight& gw = prob.noise.gamma;
  const bool with_truth = prob.truth.has_value() && truth_image.has_value();

  const Matrix du = deviations(ens.matrix());
  const Matrix wdg = gw.whiten(deviations(images));
  const Matrix wres = gw.whiten(images.colwise() - prob.data);

  MemberDiagnostics md;
  md.e2 = du.colwise().squaredNorm().transpose();
  md.ae2 = wdg.colwise().squaredNorm().transpose();
  md.theta2 = wres.colwise().squaredNorm().transpose();
  md.phi = 0.5 * md.theta2;

  const Matrix e_mat = wdg.transpose() * wdg;
  md.e_fro = e_mat.norm();
  if (with_truth) {
    const Matrix r = ens.matrix().colwise() - *prob.truth;
    const Matrix war = gw.whiten(images.colwise() - *truth_image);
    md.r2 = r.colwise().squaredNorm().transpose();
    md.ar2 = war.colwise().squaredNorm().transpose();
    md.f_fro = (war.transpose() * wdg).norm();
    md.r_fro = (war.transpose() * war).norm();
  }
  return md;
}

std::vector<double> diagnostic_row(double t, const MemberDiagnostics& md, bool with_truth) {
  std::vector<double> row{t};
  auto push = [&row](const Vector& v) {
    row.push_back(v.mean());
    row.push_back(v.minCoeff());
    row.push_back(v.maxCoeff());
  };
  push(md.e2);
  push(md.ae2);
  if (with_truth) {
    push(md.r2);
    push(md.ar2);
  }
  push(md.phi);
  push(md.theta2);
  if (with_truth) {
    row.push_back(md.e_fro);
    row.push_back(md.f_fro);
    row.push_back(md.r_fro);
  }
  return row;
}

void record_state(Trajectory& traj, double t, const Ensemble& ens, const InverseProblem& prob,
                  const std::optional<Vector>& truth_image, const Matrix* images,
                  bool keep_ensemble) {
  const bool with_truth = prob.truth.has_value() && truth_image.has_value();
  if (traj.diagnostics.columns().empty())
    traj.diagnostics = DiagnosticsTable(diagnostic_columns(with_truth));
  Matrix local;
  if (images == nullptr) {
    local = kernels::forward_images(ens, prob.forward);
    images = &local;
  }
  traj.diagnostics.append(
      diagnostic_row(t, member_diagnostics(ens, *images, prob, truth_image), with_truth));
  traj.times.push_back(t);
  if (keep_ensemble) traj.ensembles.push_back(ens);
}

}  // namespace eki
