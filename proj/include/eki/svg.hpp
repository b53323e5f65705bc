#pragma once

// Minimal SVG line plots (linear or logarithmic axes) for diagnostics.

#include <string>
#include <vector>

namespace eki::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  /// Optional shaded band [lo, hi]; empty or same length as x.
  std::vector<double> lo;
  std::vector<double> hi;
};

struct PlotSpec {
  std::string title;
  std::string x_label = "t";
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

/// Points with non-finite coordinates, or non-positive ones on a log axis,
/// are skipped.
std::string render(const PlotSpec& spec, const std::vector<Series>& series);

}  // namespace eki::svg
