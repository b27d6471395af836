#include "regatta/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "regatta/errors.hpp"

namespace regatta {
namespace {

struct Bounds {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void absorb(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return lo > hi; }
  void pad() {
    if (empty()) {
      lo = 0.0;
      hi = 1.0;
      return;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    } else {
      const double m = 0.05 * (hi - lo);
      lo -= m;
      hi += m;
    }
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << v;
  return os.str();
}

// Round tick step to 1/2/5 times a power of ten.
double tick_step(double range, int target) {
  const double raw = range / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  double s = 10.0;
  if (r <= 1.0) s = 1.0;
  else if (r <= 2.0) s = 2.0;
  else if (r <= 5.0) s = 5.0;
  return s * mag;
}

}  // namespace

void write_svg_chart(const SvgChart& chart, const std::filesystem::path& path) {
  Bounds bx;
  Bounds by;
  for (const auto& s : chart.series) {
    for (double v : s.x) bx.absorb(v);
    for (double v : s.y) by.absorb(v);
  }
  for (double v : chart.hlines) by.absorb(v);
  bx.pad();
  by.pad();

  const double ml = 64.0, mr = 16.0, mt = 34.0, mb = 46.0;
  const double pw = chart.width - ml - mr;
  const double ph = chart.height - mt - mb;
  auto px = [&](double x) { return ml + (x - bx.lo) / (bx.hi - bx.lo) * pw; };
  auto py = [&](double y) { return mt + (by.hi - y) / (by.hi - by.lo) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << chart.width
     << "\" height=\"" << chart.height << "\" viewBox=\"0 0 " << chart.width
     << " " << chart.height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << chart.width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"14\">" << chart.title
     << "</text>\n";

  // axes and ticks
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw
     << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
  const double sx = tick_step(bx.hi - bx.lo, 6);
  for (double t = std::ceil(bx.lo / sx) * sx; t <= bx.hi + 1e-12; t += sx) {
    os << "<line x1=\"" << px(t) << "\" y1=\"" << mt + ph << "\" x2=\""
       << px(t) << "\" y2=\"" << mt + ph + 4 << "\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << px(t) << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(t) << "</text>\n";
  }
  const double sy = tick_step(by.hi - by.lo, 5);
  for (double t = std::ceil(by.lo / sy) * sy; t <= by.hi + 1e-12; t += sy) {
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(t) << "\" x2=\"" << ml
       << "\" y2=\"" << py(t) << "\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(t) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(t) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << chart.height - 8
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"12\">"
     << chart.x_label << "</text>\n";
  os << "<text x=\"14\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
     << "transform=\"rotate(-90 14 " << mt + ph / 2 << ")\">" << chart.y_label
     << "</text>\n";

  for (double h : chart.hlines) {
    os << "<line x1=\"" << ml << "\" y1=\"" << py(h) << "\" x2=\"" << ml + pw
       << "\" y2=\"" << py(h)
       << "\" stroke=\"#999\" stroke-dasharray=\"6 4\"/>\n";
  }

  double legend_y = mt + 14.0;
  for (const auto& s : chart.series) {
    if (s.points_only) {
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i])
           << "\" r=\"3\" fill=\"" << s.color << "\" fill-opacity=\"0.8\"/>\n";
      }
    } else {
      os << "<polyline fill=\"none\" stroke=\"" << s.color
         << "\" stroke-width=\"1.6\" points=\"";
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        os << px(s.x[i]) << "," << py(s.y[i]) << " ";
      }
      os << "\"/>\n";
    }
    if (!s.label.empty()) {
      os << "<rect x=\"" << ml + pw - 150 << "\" y=\"" << legend_y - 9
         << "\" width=\"12\" height=\"12\" fill=\"" << s.color << "\"/>\n";
      os << "<text x=\"" << ml + pw - 132 << "\" y=\"" << legend_y + 2
         << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label
         << "</text>\n";
      legend_y += 18.0;
    }
  }
  os << "</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << os.str();
}

}  // namespace regatta
