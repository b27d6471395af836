#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace regatta {

// Minimal plot writer: enough to chart segment profiles and agreement
// scatter without a plotting dependency.
struct SvgSeries {
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool points_only = false;
  std::string label;
};

struct SvgChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<SvgSeries> series;
  std::vector<double> hlines;  // dashed horizontal guide lines
  int width = 860;
  int height = 420;
};

void write_svg_chart(const SvgChart& chart, const std::filesystem::path& path);

}  // namespace regatta
