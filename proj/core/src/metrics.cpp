#include "medcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "medcl/error.hpp"

namespace medcl {
namespace {

std::vector<std::pair<int, int>> boundary_pixels(const Grid<uint8_t>& mask) {
  std::vector<std::pair<int, int>> out;
  const int h = mask.height(), w = mask.width();
  auto inside = [&](int r, int c) {
    return r >= 0 && r < h && c >= 0 && c < w && mask(r, c) != 0;
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (mask(r, c) == 0) continue;
      if (!inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) || !inside(r, c + 1)) {
        out.emplace_back(r, c);
      }
    }
  }
  return out;
}

// max over a of min over b of |a-b|, squared distances until the final root.
double directed_sq(const std::vector<std::pair<int, int>>& a,
                   const std::vector<std::pair<int, int>>& b) {
  double worst = 0.0;
  for (const auto& [ar, ac] : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [br, bc] : b) {
      const double dr = ar - br, dc = ac - bc;
      const double d = dr * dr + dc * dc;
      if (d < best) {
        best = d;
        if (best <= worst) break;  // cannot raise the running max
      }
    }
    worst = std::max(worst, best);
  }
  return worst;
}

// Nearest-rank percentile of the per-pixel minimum distances a -> b.
double directed_percentile_sq(const std::vector<std::pair<int, int>>& a,
                              const std::vector<std::pair<int, int>>& b, double percentile) {
  std::vector<double> mins;
  mins.reserve(a.size());
  for (const auto& [ar, ac] : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [br, bc] : b) {
      const double dr = ar - br, dc = ac - bc;
      best = std::min(best, dr * dr + dc * dc);
    }
    mins.push_back(best);
  }
  std::sort(mins.begin(), mins.end());
  const size_t rank = static_cast<size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(mins.size())));
  return mins[std::max<size_t>(rank, 1) - 1];
}

}  // namespace

double dice(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt) {
  require(pred.same_shape(gt), ErrorCode::ShapeMismatch, "dice: mask shapes differ");
  size_t inter = 0, total = 0;
  const uint8_t* p = pred.data();
  const uint8_t* g = gt.data();
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool a = p[i] != 0, b = g[i] != 0;
    inter += a && b;
    total += a;
    total += b;
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

std::optional<double> hausdorff(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt,
                                double percentile) {
  require(pred.same_shape(gt), ErrorCode::ShapeMismatch, "hausdorff: mask shapes differ");
  require(percentile > 0.0 && percentile <= 100.0, ErrorCode::InvalidArgument,
          "hausdorff: percentile must lie in (0,100]");
  const auto a = boundary_pixels(pred);
  const auto b = boundary_pixels(gt);
  if (a.empty() || b.empty()) return std::nullopt;
  if (percentile >= 100.0) {
    return std::sqrt(std::max(directed_sq(a, b), directed_sq(b, a)));
  }
  return std::sqrt(std::max(directed_percentile_sq(a, b, percentile),
                            directed_percentile_sq(b, a, percentile)));
}

}  // namespace medcl
