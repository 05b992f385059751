#include "tatesens/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tatesens {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

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

std::vector<double> nice_ticks(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 1;
    hi += 1;
  }
  const double raw = (hi - lo) / 5;
  const double mag = std::pow(10, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) {
    t.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  }
  return t;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kTop + (y1 - y) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void pad(double& lo, double& hi) {
  if (!(hi > lo)) {
    const double d = std::max(std::abs(lo) * 0.1, 1.0);
    lo -= d;
    hi += d;
    return;
  }
  const double d = (hi - lo) * 0.05;
  lo -= d;
  hi += d;
}

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" "
     << "font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << f2(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(title) << "</text>\n";
}

void y_axis(std::ostringstream& os, const Frame& fr, const std::string& label) {
  os << "<line x1=\"" << f2(kLeft) << "\" y1=\"" << f2(kTop) << "\" x2=\"" << f2(kLeft)
     << "\" y2=\"" << f2(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  for (double t : nice_ticks(fr.y0, fr.y1)) {
    if (t < fr.y0 || t > fr.y1) continue;
    os << "<line x1=\"" << f2(kLeft - 4) << "\" y1=\"" << f2(fr.py(t)) << "\" x2=\"" << f2(kLeft)
       << "\" y2=\"" << f2(fr.py(t)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << f2(kLeft - 7) << "\" y=\"" << f2(fr.py(t) + 4)
       << "\" text-anchor=\"end\">" << fmt6(t) << "</text>\n";
  }
  os << "<text x=\"16\" y=\"" << f2((kTop + kHeight - kBottom) / 2) << "\" text-anchor=\"middle\" "
     << "transform=\"rotate(-90 16 " << f2((kTop + kHeight - kBottom) / 2) << ")\">"
     << escape(label) << "</text>\n";
}

}  // namespace

std::string sensitivity_svg(std::span<const SensitivityResult> results, const std::string& title) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  std::string axis;
  for (const auto& r : results) {
    for (const auto& row : r.rows) {
      if (std::isnan(row.ev_value) || row.ev_value2) continue;
      x0 = std::min(x0, row.ev_value);
      x1 = std::max(x1, row.ev_value);
      y0 = std::min(y0, row.lower);
      y1 = std::max(y1, row.upper);
    }
    if (axis.empty()) axis = r.sweep_axis;
  }
  std::ostringstream os;
  header(os, title);
  if (!std::isfinite(x0)) {
    os << "<text x=\"" << f2(kWidth / 2) << "\" y=\"" << f2(kHeight / 2)
       << "\" text-anchor=\"middle\">no sensitivity parameter</text>\n</svg>\n";
    return os.str();
  }
  if (!(x1 > x0)) pad(x0, x1);
  pad(y0, y1);
  const Frame fr{x0, x1, y0, y1};
  os << "<line x1=\"" << f2(kLeft) << "\" y1=\"" << f2(kHeight - kBottom) << "\" x2=\""
     << f2(kWidth - kRight) << "\" y2=\"" << f2(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  for (double t : nice_ticks(x0, x1)) {
    if (t < x0 || t > x1) continue;
    os << "<line x1=\"" << f2(fr.px(t)) << "\" y1=\"" << f2(kHeight - kBottom) << "\" x2=\""
       << f2(fr.px(t)) << "\" y2=\"" << f2(kHeight - kBottom + 4) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << f2(fr.px(t)) << "\" y=\"" << f2(kHeight - kBottom + 18)
       << "\" text-anchor=\"middle\">" << fmt6(t) << "</text>\n";
  }
  os << "<text x=\"" << f2((kLeft + kWidth - kRight) / 2) << "\" y=\"" << f2(kHeight - 16)
     << "\" text-anchor=\"middle\">" << escape("population mean of " + axis) << "</text>\n";
  y_axis(os, fr, "TATE (" + (results.empty() ? std::string() : to_string(results[0].scale)) + ")");

  std::size_t k = 0;
  for (const auto& r : results) {
    const char* color = kColors[k % 4];
    const std::string name = to_string(r.method) + (r.variant.empty() ? "" : " (" + r.variant + ")");
    for (int line = 0; line < 3; ++line) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
         << (line == 0 ? "2" : "1.2") << "\"" << (line == 0 ? "" : " stroke-dasharray=\"5,4\"")
         << " points=\"";
      bool first = true;
      for (const auto& row : r.rows) {
        if (std::isnan(row.ev_value) || row.ev_value2) continue;
        const double v = line == 0 ? row.estimate : line == 1 ? row.lower : row.upper;
        os << (first ? "" : " ") << f2(fr.px(row.ev_value)) << "," << f2(fr.py(v));
        first = false;
      }
      os << "\"/>\n";
    }
    const double ly = kTop + 10 + 36 * static_cast<double>(k);
    const double lx = kWidth - kRight + 14;
    os << "<line x1=\"" << f2(lx) << "\" y1=\"" << f2(ly) << "\" x2=\"" << f2(lx + 24) << "\" y2=\""
       << f2(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << f2(lx + 30) << "\" y=\"" << f2(ly + 4) << "\">" << escape(name)
       << "</text>\n";
    os << "<line x1=\"" << f2(lx) << "\" y1=\"" << f2(ly + 16) << "\" x2=\"" << f2(lx + 24)
       << "\" y2=\"" << f2(ly + 16) << "\" stroke=\"" << color
       << "\" stroke-dasharray=\"5,4\"/>\n";
    os << "<text x=\"" << f2(lx + 30) << "\" y=\"" << f2(ly + 20) << "\">"
       << escape(name + " CI") << "</text>\n";
    ++k;
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<GroupEffect> group_effects(const FittedModel& model, const TateSpec& spec,
                                       double ci_level) {
  std::vector<GroupEffect> out;
  const auto base = lincom(model, {{spec.treatment_coefficient, 1.0}}, ci_level);
  out.push_back(GroupEffect{"reference", base.estimate, base.lower, base.upper});
  for (const auto& t : spec.terms) {
    if (t.factors.size() != 1) continue;
    const auto r = lincom(model, {{spec.treatment_coefficient, 1.0}, {t.coefficient, 1.0}}, ci_level);
    out.push_back(GroupEffect{t.factors[0].key, r.estimate, r.lower, r.upper});
  }
  return out;
}

std::string group_effects_svg(const std::vector<GroupEffect>& groups, const std::string& title) {
  std::ostringstream os;
  header(os, title);
  if (groups.empty()) {
    os << "</svg>\n";
    return os.str();
  }
  double y0 = INFINITY, y1 = -INFINITY;
  for (const auto& g : groups) {
    y0 = std::min({y0, g.lower, 0.0});
    y1 = std::max({y1, g.upper, 0.0});
  }
  pad(y0, y1);
  const Frame fr{0, static_cast<double>(groups.size()), y0, y1};
  y_axis(os, fr, "treatment effect");
  os << "<line x1=\"" << f2(kLeft) << "\" y1=\"" << f2(fr.py(0)) << "\" x2=\"" << f2(kWidth - kRight)
     << "\" y2=\"" << f2(fr.py(0)) << "\" stroke=\"gray\" stroke-dasharray=\"3,3\"/>\n";
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const double x = fr.px(static_cast<double>(i) + 0.5);
    os << "<line x1=\"" << f2(x) << "\" y1=\"" << f2(fr.py(g.lower)) << "\" x2=\"" << f2(x)
       << "\" y2=\"" << f2(fr.py(g.upper)) << "\" stroke=\"" << kColors[0] << "\"/>\n";
    os << "<circle cx=\"" << f2(x) << "\" cy=\"" << f2(fr.py(g.estimate)) << "\" r=\"4\" fill=\""
       << kColors[0] << "\"/>\n";
    os << "<text x=\"" << f2(x) << "\" y=\"" << f2(kHeight - kBottom + 18)
       << "\" text-anchor=\"middle\">" << escape(g.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace tatesens
