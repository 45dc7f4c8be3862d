#include "medcl/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>

#include "medcl/error.hpp"
#include "medcl/png_io.hpp"

namespace medcl {
namespace {

// 5x7 glyphs, one byte per row, low 5 bits used (bit 4 = leftmost column).
struct Glyph {
  char ch;
  std::array<uint8_t, 7> rows;
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {'%', {0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'#', {0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A}},
};

const std::array<uint8_t, 7>* find_glyph(char ch) {
  for (const Glyph& g : kFont) {
    if (g.ch == ch) return &g.rows;
  }
  return nullptr;
}

struct Rgb {
  uint8_t r, g, b;
};

constexpr Rgb kBackground{255, 255, 255};
constexpr Rgb kFrame{60, 60, 60};
constexpr Rgb kGridline{225, 225, 225};
constexpr Rgb kText{30, 30, 30};
constexpr Rgb kPalette[] = {
    {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207},
};

class Canvas {
 public:
  Canvas(int height, int width)
      : height_(height), width_(width), rgb_(static_cast<size_t>(height) * width * 3, 255) {}

  void set(int r, int c, Rgb color) {
    if (r < 0 || r >= height_ || c < 0 || c >= width_) return;
    const size_t at = (static_cast<size_t>(r) * width_ + c) * 3;
    rgb_[at] = color.r;
    rgb_[at + 1] = color.g;
    rgb_[at + 2] = color.b;
  }

  void fill_rect(int r0, int c0, int r1, int c1, Rgb color) {
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) set(r, c, color);
    }
  }

  void line(int r0, int c0, int r1, int c1, Rgb color) {
    const int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
    const int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
    int err = (dc > dr ? dc : -dr) / 2;
    while (true) {
      set(r0, c0, color);
      if (r0 == r1 && c0 == c1) break;
      const int e = err;
      if (e > -dc) {
        err -= dr;
        c0 += sc;
      }
      if (e < dr) {
        err += dc;
        r0 += sr;
      }
    }
  }

  // Uppercased 5x7 text. Unknown characters advance the pen silently.
  void text(int r, int c, const std::string& s, Rgb color) {
    for (char raw : s) {
      const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      if (const auto* rows = find_glyph(ch)) {
        for (int gr = 0; gr < 7; ++gr) {
          for (int gc = 0; gc < 5; ++gc) {
            if ((*rows)[gr] >> (4 - gc) & 1) set(r + gr, c + gc, color);
          }
        }
      }
      c += 6;
    }
  }

  static int text_width(const std::string& s) { return 6 * static_cast<int>(s.size()); }

  const std::vector<uint8_t>& pixels() const { return rgb_; }

 private:
  int height_, width_;
  std::vector<uint8_t> rgb_;
};

std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                     const std::string& title, const std::string& x_label,
                     const std::string& y_label, int width, int height) {
  require(!series.empty(), ErrorCode::InvalidArgument, "plot needs at least one series");
  require(width >= 160 && height >= 120, ErrorCode::InvalidArgument,
          "plot canvas is too small to be legible");
  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (const PlotSeries& s : series) {
    require(!s.x.empty() && s.x.size() == s.y.size(), ErrorCode::InvalidArgument,
            "plot series must pair at least one x with one y");
    for (double v : s.x) {
      require(std::isfinite(v), ErrorCode::InvalidArgument, "plot coordinates must be finite");
      x_min = std::min(x_min, v);
      x_max = std::max(x_max, v);
    }
    for (double v : s.y) {
      require(std::isfinite(v), ErrorCode::InvalidArgument, "plot coordinates must be finite");
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  }
  // Pad the ranges so lines stay clear of the frame; degenerate ranges get a
  // unit window around the single value.
  auto pad = [](double& lo, double& hi) {
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    } else {
      const double margin = 0.05 * (hi - lo);
      lo -= margin;
      hi += margin;
    }
  };
  pad(x_min, x_max);
  pad(y_min, y_max);

  const int top = 28, bottom = height - 40, left = 64, right = width - 16;
  Canvas canvas(height, width);
  auto to_col = [&](double x) {
    return left + static_cast<int>(std::lround((x - x_min) / (x_max - x_min) * (right - left)));
  };
  auto to_row = [&](double y) {
    return bottom - static_cast<int>(std::lround((y - y_min) / (y_max - y_min) * (bottom - top)));
  };

  const int ticks = 5;
  for (int t = 0; t < ticks; ++t) {
    const double fx = x_min + (x_max - x_min) * t / (ticks - 1);
    const double fy = y_min + (y_max - y_min) * t / (ticks - 1);
    const int col = to_col(fx), row = to_row(fy);
    canvas.line(top, col, bottom, col, kGridline);
    canvas.line(row, left, row, right, kGridline);
    const std::string xs = format_tick(fx), ys = format_tick(fy);
    canvas.text(bottom + 6, col - Canvas::text_width(xs) / 2, xs, kText);
    canvas.text(row - 3, left - 6 - Canvas::text_width(ys), ys, kText);
    canvas.line(bottom, col, bottom + 3, col, kFrame);
    canvas.line(row, left - 3, row, left, kFrame);
  }
  canvas.line(top, left, bottom, left, kFrame);
  canvas.line(bottom, left, bottom, right, kFrame);
  canvas.text(8, (left + right) / 2 - Canvas::text_width(title) / 2, title, kText);
  canvas.text(height - 12, (left + right) / 2 - Canvas::text_width(x_label) / 2, x_label, kText);
  canvas.text(top - 14, left, y_label, kText);

  for (size_t i = 0; i < series.size(); ++i) {
    const Rgb color = kPalette[i % std::size(kPalette)];
    const PlotSeries& s = series[i];
    for (size_t p = 0; p + 1 < s.x.size(); ++p) {
      canvas.line(to_row(s.y[p]), to_col(s.x[p]), to_row(s.y[p + 1]), to_col(s.x[p + 1]), color);
    }
    for (size_t p = 0; p < s.x.size(); ++p) {
      canvas.fill_rect(to_row(s.y[p]) - 2, to_col(s.x[p]) - 2, to_row(s.y[p]) + 2,
                       to_col(s.x[p]) + 2, color);
    }
    const int legend_row = top + 6 + 12 * static_cast<int>(i);
    const int legend_col = right - 14 - Canvas::text_width(s.label);
    canvas.fill_rect(legend_row, legend_col - 12, legend_row + 7, legend_col - 5, color);
    canvas.text(legend_row, legend_col, s.label, kText);
  }

  write_png_rgb(path, height, width, canvas.pixels());
}

}  // namespace medcl
