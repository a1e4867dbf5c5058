#pragma once

#include <string>
#include <vector>

namespace attg {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

// Static SVG line chart. Single points are drawn as markers; non-finite values are skipped.
std::string render_line_chart(const PlotSpec& spec);

}  // namespace attg
