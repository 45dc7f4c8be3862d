#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "medcl/grid.hpp"

namespace medcl {

// Sentinel for "no scribble here" in 8-bit scribble maps.
inline constexpr uint8_t kUnlabeled = 255;

enum class PhantomMode { Structure, Pathology };

struct PhantomSpec {
  int height = 64;
  int width = 64;
  int num_classes = 3;  // foreground classes m, background excluded
  PhantomMode mode = PhantomMode::Structure;
  double noise_sigma = 0.03;         // additive Gaussian, fraction of full scale
  double bias_field_strength = 0.2;  // multiplicative low-frequency shading
  double shape_jitter = 0.3;         // radial boundary wobble
  double scribble_coverage = 0.05;   // scribbled fraction of each region

  void validate() const;

  bool operator==(const PhantomSpec&) const = default;
};

struct PhantomSample {
  ImageF image;        // intensities in [0,1], quantized to the 16-bit grid
  LabelMap labels;     // 0 = background, 1..m = classes
  LabelMap scribbles;  // class id where annotated, kUnlabeled elsewhere
  std::set<int> present_classes;  // foreground ids occurring in labels

  bool operator==(const PhantomSample&) const = default;
};

// Nested cardiac-style anatomy: class 1 is an inner disk, class 2 an annulus
// enclosing it, class 3 a crescent hugging the annulus (if m >= 3); classes
// beyond 3 are disjoint ellipses. Pure function of (spec, seed).
PhantomSample gen_structure_sample(const PhantomSpec& spec, uint64_t seed);

// Structure host (two nested classes) with 0..3 irregular blobs carved out of
// the annulus and relabeled as classes 3..m; each blob class is present with
// probability 0.7 so the present-class set varies across seeds.
PhantomSample gen_pathology_sample(const PhantomSpec& spec, uint64_t seed);

// Dispatch on spec.mode.
PhantomSample gen_sample(const PhantomSpec& spec, uint64_t seed);

// One thin connected curve per class present in `labels` (background
// included), each covering roughly `coverage` of its region's area. Regions
// smaller than 3 pixels are skipped; their ids are appended to `warnings`
// when it is non-null.
LabelMap synthesize_scribbles(const LabelMap& labels, double coverage, uint64_t seed,
                              std::vector<int>* warnings = nullptr);

}  // namespace medcl
