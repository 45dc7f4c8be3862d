#pragma once

#include <optional>
#include <vector>

#include "medcl/grid.hpp"
#include "medcl/phantom.hpp"

namespace medcl {

// Axis-aligned box as a binary mask plus its half-open pixel coordinates
// [row0,row1) x [col0,col1).
struct BoundingBoxMask {
  Grid<uint8_t> mask;
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  int area() const { return (row1 - row0) * (col1 - col0); }
};

// Random class order pi with the nested subsets it induces: Omega_k = first k
// entries of pi, so Omega_2 c Omega_3 c ... c Omega_m = {1..m}.
struct SubsetSchedule {
  std::vector<int> perm;

  int m() const { return static_cast<int>(perm.size()); }
  std::vector<int> omega(int k) const {
    require(k >= 2 && k <= m(), ErrorCode::InvalidArgument, "omega index out of range");
    return {perm.begin(), perm.begin() + k};
  }

  bool operator==(const SubsetSchedule&) const = default;
};

// Where a mixed image came from; carried along for debugging and for pairing
// checks, never fed to the network.
struct MixProvenance {
  std::vector<int> source_ids;
  double beta_prime = 1.0;
  double theta = 0.0;
  std::optional<double> beta;  // set once two samples are inter-mixed
};

struct MixedSample {
  ImageF image;
  BoundingBoxMask box;
  SubsetSchedule schedule;
  MixProvenance provenance;
};

struct MixTarget {
  Tensor3 target;  // (2m-1) x h x w, convex combination of two predictions
  double beta = 0.0;
};

// Beta(alpha, alpha) draw; alpha=1 degenerates to Uniform[0,1].
double sample_mix_ratio(double alpha, uint64_t seed);

// Bilinear rotation about the image center, out-of-frame samples replicate
// the nearest edge pixel. theta in degrees; theta=0 is an exact identity.
ImageF rotate(const ImageF& image, double theta_deg);

// x' = I_b*x + (1-I_b)*[beta'*x + (1-beta')*R(x,theta)]: inside the box the
// image is untouched, outside it is blended with its own rotation.
ImageF intra_mix(const ImageF& x, const BoundingBoxMask& box, double beta_prime,
                 double theta_deg);

// Uniform box whose area fraction lands in [area_lo, area_hi].
BoundingBoxMask sample_bbox(int height, int width, double area_lo, double area_hi,
                            uint64_t seed);

// Uniformly random permutation of {1..m}.
SubsetSchedule sample_subsets(int m, uint64_t seed);

// x12 = beta*x1' + (1-beta)*x2'; box mask is the union. Both inputs must
// share one schedule, which the result keeps.
MixedSample inter_mix(const MixedSample& s1, const MixedSample& s2, double beta);

// Channelwise convex combination of two prediction stacks.
MixTarget mix_targets(const Tensor3& y1, const Tensor3& y2, double beta);

struct CropConfig {
  int out_height = 0;  // network input size; 0 means "same as source"
  int out_width = 0;
  int global_count = 4;
  double global_lo = 0.6, global_hi = 1.0;
  int local_count = 6;
  double local_lo = 0.2, local_hi = 0.5;
};

// Multi-crop amplification: global_count large crops plus local_count small
// ones, each a random sub-rectangle resized to the output size (bilinear for
// the image, nearest-neighbor for labels and scribbles). Crop present-class
// sets are recomputed from the cropped labels.
std::vector<PhantomSample> multi_crop(const PhantomSample& sample, const CropConfig& config,
                                      uint64_t seed);

}  // namespace medcl
