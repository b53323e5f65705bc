#include "eki/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace eki::svg {

namespace {

const char* const kPalette[] = {"#c0392b", "#2471a3", "#229954", "#7d3c98", "#b9770e", "#212f3d"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Axis {
  bool log = false;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  bool usable(double v) const { return std::isfinite(v) && (!log || v > 0.0); }
  double map(double v) const { return log ? std::log10(v) : v; }
  void include(double v) {
    if (!usable(v)) return;
    lo = std::min(lo, map(v));
    hi = std::max(hi, map(v));
  }
  void finish() {
    if (!(lo <= hi)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  double frac(double v) const { return (map(v) - lo) / (hi - lo); }
  double unmap(double m) const { return log ? std::pow(10.0, m) : m; }
};

}  // namespace

std::string render(const PlotSpec& spec, const std::vector<Series>& series) {
  const double left = 70, right = 20, top = 36, bottom = 48;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;

  Axis ax{spec.log_x}, ay{spec.log_y};
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!ax.usable(s.x[i])) continue;
      ax.include(s.x[i]);
      ay.include(s.y[i]);
      if (!s.lo.empty()) ay.include(s.lo[i]);
      if (!s.hi.empty()) ay.include(s.hi[i]);
    }
  ax.finish();
  ay.finish();
  auto px = [&](double x) { return left + ax.frac(x) * pw; };
  auto py = [&](double y) { return top + (1.0 - ay.frac(y)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
    << spec.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << spec.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(spec.title) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int k = 0; k <= 4; ++k) {
    const double fx = k / 4.0;
    const double gx = left + fx * pw, gy = top + (1.0 - fx) * ph;
    o << "<line x1=\"" << gx << "\" y1=\"" << top + ph << "\" x2=\"" << gx << "\" y2=\"" << top + ph + 5
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << gx << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << fmt(ax.unmap(ax.lo + fx * (ax.hi - ax.lo))) << "</text>\n";
    o << "<line x1=\"" << left - 5 << "\" y1=\"" << gy << "\" x2=\"" << left << "\" y2=\"" << gy
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left - 8 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">"
      << fmt(ay.unmap(ay.lo + fx * (ay.hi - ay.lo))) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 8 << "\" text-anchor=\"middle\">"
    << escape(spec.x_label) << (spec.log_x ? " (log)" : "") << "</text>\n";
  o << "<text x=\"14\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << top + ph / 2 << ")\">" << escape(spec.y_label) << (spec.log_y ? " (log)" : "") << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* colour = kPalette[s % (sizeof kPalette / sizeof *kPalette)];
    const bool band = ser.lo.size() == ser.x.size() && ser.hi.size() == ser.x.size() && !ser.x.empty();
    if (band) {
      std::ostringstream upper, lower;
      for (std::size_t i = 0; i < ser.x.size(); ++i) {
        if (!ax.usable(ser.x[i]) || !ay.usable(ser.lo[i]) || !ay.usable(ser.hi[i])) continue;
        upper << px(ser.x[i]) << ',' << py(ser.hi[i]) << ' ';
      }
      for (std::size_t i = ser.x.size(); i-- > 0;) {
        if (!ax.usable(ser.x[i]) || !ay.usable(ser.lo[i]) || !ay.usable(ser.hi[i])) continue;
        lower << px(ser.x[i]) << ',' << py(ser.lo[i]) << ' ';
      }
      o << "<polygon points=\"" << upper.str() << lower.str() << "\" fill=\"" << colour
        << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ser.x.size(); ++i)
      if (ax.usable(ser.x[i]) && ay.usable(ser.y[i])) o << px(ser.x[i]) << ',' << py(ser.y[i]) << ' ';
    o << "\"/>\n";
    const double ly = top + 14 + 16.0 * static_cast<double>(s);
    o << "<line x1=\"" << left + pw - 130 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw - 110
      << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw - 105 << "\" y=\"" << ly << "\">" << escape(ser.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace eki::svg
