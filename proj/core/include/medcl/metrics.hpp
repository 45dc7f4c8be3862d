#pragma once

#include <optional>

#include "medcl/grid.hpp"

namespace medcl {

// Overlap between two binary masks (nonzero = inside): 2|A∩B|/(|A|+|B|).
// Two empty masks count as a perfect match (1.0).
double dice(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt);

// Symmetric Hausdorff distance between the boundary pixel sets of two binary
// masks, Euclidean metric, pixel units. A boundary pixel is an inside pixel
// with at least one of its 4-neighbors outside the mask (frame edges count as
// outside). Either mask empty yields an empty optional; callers exclude such
// cases from averages. `percentile` < 100 switches to the percentile variant
// (nearest-rank over each directed distance set, max of the two directions);
// the default is the plain maximum.
std::optional<double> hausdorff(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt,
                                double percentile = 100.0);

}  // namespace medcl
