#include "medcl/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "medcl/rng.hpp"

namespace medcl {

namespace {

// Bilinear lookup with edge replication outside the frame.
double sample_bilinear(const ImageF& img, double row, double col) {
  double rc = std::clamp(row, 0.0, img.height() - 1.0);
  double cc = std::clamp(col, 0.0, img.width() - 1.0);
  int r0 = static_cast<int>(std::floor(rc));
  int c0 = static_cast<int>(std::floor(cc));
  int r1 = std::min(r0 + 1, img.height() - 1);
  int c1 = std::min(c0 + 1, img.width() - 1);
  double fr = rc - r0;
  double fc = cc - c0;
  return (1.0 - fr) * ((1.0 - fc) * img(r0, c0) + fc * img(r0, c1)) +
         fr * ((1.0 - fc) * img(r1, c0) + fc * img(r1, c1));
}

}  // namespace

double sample_mix_ratio(double alpha, uint64_t seed) {
  require(alpha > 0.0, ErrorCode::InvalidArgument, "mix ratio alpha must be positive");
  Rng rng(seed);
  return rng.beta(alpha, alpha);
}

ImageF rotate(const ImageF& image, double theta_deg) {
  require(std::abs(theta_deg) <= 45.0, ErrorCode::InvalidArgument,
          "rotation angle must stay within +/-45 degrees");
  const double theta = theta_deg * M_PI / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cy = (image.height() - 1) / 2.0;
  const double cx = (image.width() - 1) / 2.0;

  ImageF out(image.height(), image.width());
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      // Inverse-rotate the output pixel into source coordinates.
      double dy = r - cy;
      double dx = c - cx;
      double src_r = cy + dy * cos_t - dx * sin_t;
      double src_c = cx + dy * sin_t + dx * cos_t;
      out(r, c) = sample_bilinear(image, src_r, src_c);
    }
  }
  return out;
}

ImageF intra_mix(const ImageF& x, const BoundingBoxMask& box, double beta_prime,
                 double theta_deg) {
  require(x.height() == box.mask.height() && x.width() == box.mask.width(),
          ErrorCode::InvalidArgument, "image and box mask shapes must match");
  require(beta_prime >= 0.0 && beta_prime <= 1.0, ErrorCode::InvalidArgument,
          "beta' must lie in [0,1]");

  ImageF rotated = rotate(x, theta_deg);
  ImageF out(x.height(), x.width());
  for (int r = 0; r < x.height(); ++r) {
    for (int c = 0; c < x.width(); ++c) {
      // Fused form of beta'*x + (1-beta')*R: collapses exactly to x when
      // beta'=1 or when the rotation is the identity.
      double blended = x(r, c) + (1.0 - beta_prime) * (rotated(r, c) - x(r, c));
      out(r, c) = box.mask(r, c) ? x(r, c) : blended;
    }
  }
  return out;
}

BoundingBoxMask sample_bbox(int height, int width, double area_lo, double area_hi,
                            uint64_t seed) {
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "bbox frame must be non-empty");
  require(area_lo > 0.0 && area_lo <= area_hi && area_hi <= 1.0, ErrorCode::InvalidArgument,
          "bbox area range must satisfy 0 < lo <= hi <= 1");

  Rng rng(seed);
  const double total = static_cast<double>(height) * width;
  int bh = height, bw = width;
  double best_err = std::abs(1.0 - 0.5 * (area_lo + area_hi));

  // Aim at a target area via sqrt scaling with a little aspect jitter, then
  // keep the first candidate whose integer area truly lands in range.
  // Rounding can push single candidates out, hence the retry loop; the
  // closest miss is kept as a fallback for pathologically narrow ranges.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    double a = rng.uniform(area_lo, area_hi);
    double jitter = std::exp(rng.uniform(-0.28, 0.28));
    int ch = std::clamp(static_cast<int>(std::lround(height * std::sqrt(a) * jitter)), 1, height);
    int cw = std::clamp(static_cast<int>(std::lround(width * std::sqrt(a) / jitter)), 1, width);
    double f = ch * cw / total;
    if (f >= area_lo && f <= area_hi) {
      bh = ch;
      bw = cw;
      break;
    }
    double err = std::min(std::abs(f - area_lo), std::abs(f - area_hi));
    if (err < best_err) {
      best_err = err;
      bh = ch;
      bw = cw;
    }
  }

  BoundingBoxMask box;
  box.row0 = static_cast<int>(rng.uniform_int(height - bh + 1));
  box.col0 = static_cast<int>(rng.uniform_int(width - bw + 1));
  box.row1 = box.row0 + bh;
  box.col1 = box.col0 + bw;
  box.mask.reset(height, width, 0);
  for (int r = box.row0; r < box.row1; ++r)
    for (int c = box.col0; c < box.col1; ++c) box.mask(r, c) = 1;
  return box;
}

SubsetSchedule sample_subsets(int m, uint64_t seed) {
  require(m >= 2, ErrorCode::InvalidArgument, "subset schedule needs m >= 2");
  SubsetSchedule schedule;
  schedule.perm.resize(m);
  std::iota(schedule.perm.begin(), schedule.perm.end(), 1);
  Rng rng(seed);
  rng.shuffle(schedule.perm.begin(), schedule.perm.end());
  return schedule;
}

MixedSample inter_mix(const MixedSample& s1, const MixedSample& s2, double beta) {
  require(s1.image.same_shape(s2.image), ErrorCode::InvalidArgument,
          "inter_mix needs same-shape images");
  require(s1.schedule == s2.schedule, ErrorCode::InvalidArgument,
          "inter_mix partners must share one subset schedule");
  require(beta >= 0.0 && beta <= 1.0, ErrorCode::InvalidArgument, "beta must lie in [0,1]");

  MixedSample out;
  out.image.reset(s1.image.height(), s1.image.width());
  out.box.mask.reset(s1.image.height(), s1.image.width(), 0);
  for (int r = 0; r < s1.image.height(); ++r) {
    for (int c = 0; c < s1.image.width(); ++c) {
      out.image(r, c) = beta * s1.image(r, c) + (1.0 - beta) * s2.image(r, c);
      out.box.mask(r, c) = std::max(s1.box.mask(r, c), s2.box.mask(r, c));
    }
  }
  // The union of two boxes is generally not a box; keep the bounding extent
  // of the union for the coordinate fields.
  out.box.row0 = std::min(s1.box.row0, s2.box.row0);
  out.box.col0 = std::min(s1.box.col0, s2.box.col0);
  out.box.row1 = std::max(s1.box.row1, s2.box.row1);
  out.box.col1 = std::max(s1.box.col1, s2.box.col1);
  out.schedule = s1.schedule;
  out.provenance.source_ids = s1.provenance.source_ids;
  out.provenance.source_ids.insert(out.provenance.source_ids.end(),
                                   s2.provenance.source_ids.begin(),
                                   s2.provenance.source_ids.end());
  out.provenance.beta = beta;
  return out;
}

MixTarget mix_targets(const Tensor3& y1, const Tensor3& y2, double beta) {
  require(y1.same_shape(y2), ErrorCode::InvalidArgument, "mix_targets needs same-shape stacks");
  require(beta >= 0.0 && beta <= 1.0, ErrorCode::InvalidArgument, "beta must lie in [0,1]");
  MixTarget out;
  out.beta = beta;
  out.target.reset(y1.channels(), y1.height(), y1.width());
  const double* a = y1.data();
  const double* b = y2.data();
  double* t = out.target.data();
  for (size_t i = 0; i < y1.size(); ++i) t[i] = beta * a[i] + (1.0 - beta) * b[i];
  return out;
}

std::vector<PhantomSample> multi_crop(const PhantomSample& sample, const CropConfig& config,
                                      uint64_t seed) {
  require(config.global_count >= 0 && config.local_count >= 0, ErrorCode::InvalidArgument,
          "crop counts must be non-negative");
  const int src_h = sample.image.height();
  const int src_w = sample.image.width();
  const int out_h = config.out_height > 0 ? config.out_height : src_h;
  const int out_w = config.out_width > 0 ? config.out_width : src_w;

  std::vector<PhantomSample> crops;
  crops.reserve(config.global_count + config.local_count);

  int index = 0;
  auto emit = [&](double lo, double hi) {
    uint64_t crop_seed = derive_seed(seed, "crop", static_cast<uint64_t>(index));
    BoundingBoxMask rect = sample_bbox(src_h, src_w, lo, hi, crop_seed);
    const int ch = rect.row1 - rect.row0;
    const int cw = rect.col1 - rect.col0;

    PhantomSample crop;
    crop.image.reset(out_h, out_w);
    crop.labels.reset(out_h, out_w);
    crop.scribbles.reset(out_h, out_w);

    const double sr = static_cast<double>(ch) / out_h;
    const double sc = static_cast<double>(cw) / out_w;
    for (int r = 0; r < out_h; ++r) {
      for (int c = 0; c < out_w; ++c) {
        // Half-pixel-centered mapping; an identity-size crop maps each output
        // pixel exactly onto its source pixel.
        double src_r = rect.row0 + (r + 0.5) * sr - 0.5;
        double src_c = rect.col0 + (c + 0.5) * sc - 0.5;
        crop.image(r, c) = sample_bilinear(sample.image, src_r, src_c);

        int nn_r = std::clamp(static_cast<int>(std::floor(rect.row0 + (r + 0.5) * sr)), 0,
                              src_h - 1);
        int nn_c = std::clamp(static_cast<int>(std::floor(rect.col0 + (c + 0.5) * sc)), 0,
                              src_w - 1);
        crop.labels(r, c) = sample.labels(nn_r, nn_c);
        crop.scribbles(r, c) = sample.scribbles(nn_r, nn_c);
      }
    }
    for (uint8_t v : crop.labels)
      if (v > 0) crop.present_classes.insert(v);
    crops.push_back(std::move(crop));
    ++index;
  };

  for (int i = 0; i < config.global_count; ++i) emit(config.global_lo, config.global_hi);
  for (int i = 0; i < config.local_count; ++i) emit(config.local_lo, config.local_hi);
  return crops;
}

}  // namespace medcl
