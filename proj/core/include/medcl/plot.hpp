#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace medcl {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;  // same length, at least one point
};

// Minimal line-plot rasterizer: axes, ticks, numeric labels, legend, one
// polyline with markers per series. Just enough to render count-vs-Dice
// curves as PNGs without pulling in a plotting stack. Text uses a built-in
// 5x7 uppercase font.
void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                     const std::string& title, const std::string& x_label,
                     const std::string& y_label, int width = 640, int height = 420);

}  // namespace medcl
