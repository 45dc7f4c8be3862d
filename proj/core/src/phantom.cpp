#include "medcl/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "medcl/rng.hpp"

namespace medcl {

namespace {

constexpr double kBackgroundLevel = 0.15;

// Base intensity per class id. Classes 1 and 3 share a level on purpose: the
// inner disk and the crescent are then indistinguishable by intensity alone,
// which is exactly the situation where shape/context cues have to carry the
// segmentation.
double base_level(int cls) {
  switch (cls) {
    case 0: return kBackgroundLevel;
    case 1: return 0.82;
    case 2: return 0.45;
    case 3: return 0.82;
    case 4: return 0.95;
    case 5: return 0.05;
    case 6: return 0.70;
    case 7: return 0.30;
    case 8: return 0.60;
    default: return 0.5;
  }
}

// Smooth radial wobble: a short cosine series with random phases. Amplitude
// is capped at 0.15 of the radius, which keeps the inner boundary strictly
// inside the outer one for every jitter setting in [0,1] (the radii ratio is
// at most ~0.68, and 0.68 * 1.15 < 0.85).
struct Wobble {
  double amp[3];
  double phase[3];
  static constexpr int harmonics[3] = {2, 3, 5};

  static Wobble sample(Rng& rng, double jitter) {
    Wobble w;
    double weights[3];
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
      weights[i] = rng.uniform(0.2, 1.0);
      total += weights[i];
    }
    for (int i = 0; i < 3; ++i) {
      w.amp[i] = 0.15 * jitter * weights[i] / total;
      w.phase[i] = rng.uniform(0.0, 2.0 * M_PI);
    }
    return w;
  }

  double operator()(double angle) const {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += amp[i] * std::cos(harmonics[i] * angle + phase[i]);
    return 1.0 + v;
  }
};

struct Ellipse {
  double cx, cy, ra, rb;
  bool contains(double x, double y) const {
    double dx = (x - cx) / ra;
    double dy = (y - cy) / rb;
    return dx * dx + dy * dy <= 1.0;
  }
};

// Snap to the 16-bit intensity grid so that writing a sample as PNG and
// reading it back reproduces the in-memory values bit for bit.
double quantize16(double v) { return std::round(v * 65535.0) / 65535.0; }

void render_image(PhantomSample& sample, const PhantomSpec& spec, Rng& rng) {
  const int h = spec.height;
  const int w = spec.width;
  sample.image.reset(h, w);

  // One low-frequency multiplicative shading field over the whole frame.
  double fx = rng.uniform(0.5, 1.5);
  double fy = rng.uniform(0.5, 1.5);
  double px = rng.uniform(0.0, 2.0 * M_PI);
  double py = rng.uniform(0.0, 2.0 * M_PI);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double bias = 1.0 + spec.bias_field_strength * 0.5 *
                              std::cos(2.0 * M_PI * fx * c / w + px) *
                              std::cos(2.0 * M_PI * fy * r / h + py);
      double v = base_level(sample.labels(r, c)) * bias;
      if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
      sample.image(r, c) = quantize16(std::clamp(v, 0.0, 1.0));
    }
  }
}

void collect_present_classes(PhantomSample& sample) {
  sample.present_classes.clear();
  for (uint8_t v : sample.labels) {
    if (v > 0) sample.present_classes.insert(v);
  }
}

// Core geometry shared by both modes. `structural_m` caps how many of the
// nested/crescent/ellipse classes get drawn.
void render_labels(PhantomSample& sample, const PhantomSpec& spec, int structural_m, Rng& rng) {
  const int h = spec.height;
  const int w = spec.width;
  const double scale = std::min(h, w);
  sample.labels.reset(h, w, 0);

  double cx = w * (0.5 + rng.uniform(-0.03, 0.03));
  double cy = h * (0.5 + rng.uniform(-0.03, 0.03));
  double r2 = 0.26 * scale * rng.uniform(0.9, 1.1);  // annulus outer radius
  double r1 = r2 * rng.uniform(0.55, 0.68);          // inner disk radius
  Wobble w1 = Wobble::sample(rng, spec.shape_jitter);
  Wobble w2 = Wobble::sample(rng, spec.shape_jitter);

  // Crescent = side disk minus everything inside the (wobbled) annulus.
  double alpha = rng.uniform(0.0, 2.0 * M_PI);
  double r3 = r2 * rng.uniform(0.70, 0.85);
  double d3 = r2 * 1.1;
  double cx3 = cx + d3 * std::cos(alpha);
  double cy3 = cy + d3 * std::sin(alpha);
  Wobble w3 = Wobble::sample(rng, spec.shape_jitter);

  // Extra classes: disjoint ellipses sampled by rejection against the main
  // structure and each other.
  std::vector<Ellipse> extras;
  std::vector<int> extra_ids;
  for (int cls = 4; cls <= structural_m; ++cls) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Ellipse e;
      e.ra = scale * rng.uniform(0.05, 0.09);
      e.rb = scale * rng.uniform(0.05, 0.09);
      e.cx = rng.uniform(e.ra, w - e.ra);
      e.cy = rng.uniform(e.rb, h - e.rb);
      double margin = std::max(e.ra, e.rb);
      double dmain = std::hypot(e.cx - cx, e.cy - cy);
      if (dmain < r2 * 1.25 + margin) continue;
      double dcres = std::hypot(e.cx - cx3, e.cy - cy3);
      if (structural_m >= 3 && dcres < r3 * 1.25 + margin) continue;
      bool clash = false;
      for (const Ellipse& other : extras) {
        if (std::hypot(e.cx - other.cx, e.cy - other.cy) <
            margin + std::max(other.ra, other.rb) + 2.0) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      extras.push_back(e);
      extra_ids.push_back(cls);
      placed = true;
    }
    // A class that never finds room is simply absent from this sample.
  }

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double dx = c + 0.5 - cx;
      double dy = r + 0.5 - cy;
      double rho = std::hypot(dx, dy);
      double phi = std::atan2(dy, dx);
      if (rho <= r1 * w1(phi)) {
        sample.labels(r, c) = 1;
        continue;
      }
      double outer = r2 * w2(phi);
      if (rho <= outer) {
        sample.labels(r, c) = 2;
        continue;
      }
      if (structural_m >= 3) {
        double rho3 = std::hypot(c + 0.5 - cx3, r + 0.5 - cy3);
        double phi3 = std::atan2(r + 0.5 - cy3, c + 0.5 - cx3);
        if (rho3 <= r3 * w3(phi3)) {
          sample.labels(r, c) = 3;
          continue;
        }
      }
      for (size_t i = 0; i < extras.size(); ++i) {
        if (extras[i].contains(c + 0.5, r + 0.5)) {
          sample.labels(r, c) = static_cast<uint8_t>(extra_ids[i]);
          break;
        }
      }
    }
  }
}

// Grow an irregular blob inside `allowed` by randomly dilating from a seed
// pixel: repeatedly pick a blob pixel and claim one of its free 4-neighbors.
std::vector<std::pair<int, int>> grow_blob(const LabelMap& labels, uint8_t host_class,
                                           int target_size, Rng& rng) {
  std::vector<std::pair<int, int>> host_pixels;
  for (int r = 0; r < labels.height(); ++r)
    for (int c = 0; c < labels.width(); ++c)
      if (labels(r, c) == host_class) host_pixels.emplace_back(r, c);
  if (host_pixels.empty()) return {};

  Grid<uint8_t> in_blob(labels.height(), labels.width(), 0);
  std::vector<std::pair<int, int>> blob;
  auto seed_px = host_pixels[rng.uniform_int(static_cast<int64_t>(host_pixels.size()))];
  blob.push_back(seed_px);
  in_blob(seed_px.first, seed_px.second) = 1;

  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  int attempts = 0;
  int max_attempts = target_size * 40;
  while (static_cast<int>(blob.size()) < target_size && attempts < max_attempts) {
    ++attempts;
    auto [br, bc] = blob[rng.uniform_int(static_cast<int64_t>(blob.size()))];
    int d = static_cast<int>(rng.uniform_int(4));
    int nr = br + dr[d];
    int nc = bc + dc[d];
    if (!labels.in_bounds(nr, nc)) continue;
    if (labels(nr, nc) != host_class || in_blob(nr, nc)) continue;
    in_blob(nr, nc) = 1;
    blob.emplace_back(nr, nc);
  }
  return blob;
}

}  // namespace

void PhantomSpec::validate() const {
  require(height >= 16 && width >= 16, ErrorCode::InvalidArgument,
          "phantom frames must be at least 16x16");
  require(num_classes >= 1 && num_classes <= 8, ErrorCode::InvalidArgument,
          "num_classes must lie in [1,8]");
  require(noise_sigma >= 0.0 && noise_sigma < 1.0, ErrorCode::InvalidArgument,
          "noise_sigma must lie in [0,1)");
  require(bias_field_strength >= 0.0 && bias_field_strength <= 1.0, ErrorCode::InvalidArgument,
          "bias_field_strength must lie in [0,1]");
  require(shape_jitter >= 0.0 && shape_jitter <= 1.0, ErrorCode::InvalidArgument,
          "shape_jitter must lie in [0,1]");
  require(scribble_coverage > 0.0 && scribble_coverage <= 0.5, ErrorCode::InvalidArgument,
          "scribble_coverage must lie in (0,0.5]");
}

PhantomSample gen_structure_sample(const PhantomSpec& spec, uint64_t seed) {
  spec.validate();
  require(spec.mode == PhantomMode::Structure, ErrorCode::InvalidArgument,
          "gen_structure_sample needs mode=structure");
  require(spec.num_classes >= 2, ErrorCode::InvalidArgument,
          "structure mode needs at least 2 classes (nested disk + annulus)");

  PhantomSample sample;
  Rng geo_rng(derive_seed(seed, "phantom/geometry"));
  render_labels(sample, spec, spec.num_classes, geo_rng);
  Rng img_rng(derive_seed(seed, "phantom/image"));
  render_image(sample, spec, img_rng);
  collect_present_classes(sample);
  sample.scribbles =
      synthesize_scribbles(sample.labels, spec.scribble_coverage, derive_seed(seed, "phantom/scribbles"));
  return sample;
}

PhantomSample gen_pathology_sample(const PhantomSpec& spec, uint64_t seed) {
  spec.validate();
  require(spec.mode == PhantomMode::Pathology, ErrorCode::InvalidArgument,
          "gen_pathology_sample needs mode=pathology");
  require(spec.num_classes >= 2, ErrorCode::InvalidArgument,
          "pathology mode needs at least 2 classes");
  require(spec.num_classes <= 5, ErrorCode::InvalidArgument,
          "pathology mode supports at most 3 blob classes on a 2-class host");

  PhantomSample sample;
  Rng geo_rng(derive_seed(seed, "phantom/geometry"));
  // Host anatomy is just the nested pair; classes 3..m are carved blobs.
  render_labels(sample, spec, 2, geo_rng);

  int annulus_area = 0;
  for (uint8_t v : sample.labels)
    if (v == 2) ++annulus_area;

  for (int cls = 3; cls <= spec.num_classes; ++cls) {
    Rng blob_rng(derive_seed(seed, "phantom/blob", static_cast<uint64_t>(cls)));
    if (blob_rng.uniform() >= 0.7) continue;  // this pathology absent today
    int target = std::max(4, static_cast<int>(annulus_area * blob_rng.uniform(0.04, 0.10)));
    auto blob = grow_blob(sample.labels, 2, target, blob_rng);
    for (auto [r, c] : blob) sample.labels(r, c) = static_cast<uint8_t>(cls);
  }

  Rng img_rng(derive_seed(seed, "phantom/image"));
  render_image(sample, spec, img_rng);
  collect_present_classes(sample);
  sample.scribbles =
      synthesize_scribbles(sample.labels, spec.scribble_coverage, derive_seed(seed, "phantom/scribbles"));
  return sample;
}

PhantomSample gen_sample(const PhantomSpec& spec, uint64_t seed) {
  return spec.mode == PhantomMode::Structure ? gen_structure_sample(spec, seed)
                                             : gen_pathology_sample(spec, seed);
}

LabelMap synthesize_scribbles(const LabelMap& labels, double coverage, uint64_t seed,
                              std::vector<int>* warnings) {
  require(!labels.empty(), ErrorCode::InvalidArgument, "labels must be non-empty");
  require(coverage > 0.0 && coverage <= 0.5, ErrorCode::InvalidArgument,
          "scribble coverage must lie in (0,0.5]");

  LabelMap scribbles(labels.height(), labels.width(), kUnlabeled);

  std::set<int> classes = {0};
  for (uint8_t v : labels) classes.insert(v);

  const int dr8[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  const int dc8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

  for (int cls : classes) {
    std::vector<std::pair<int, int>> region;
    for (int r = 0; r < labels.height(); ++r)
      for (int c = 0; c < labels.width(); ++c)
        if (labels(r, c) == cls) region.emplace_back(r, c);

    if (region.size() < 3) {
      if (warnings && !region.empty()) warnings->push_back(cls);
      continue;
    }

    int target = std::max(3, static_cast<int>(std::round(coverage * region.size())));
    Rng rng(derive_seed(seed, "scribble/class", static_cast<uint64_t>(cls)));

    // Thin connected random walk: a pixel may join the scribble only while it
    // touches at most two already-scribbled 8-neighbors, which keeps the
    // result a curve rather than a growing patch. When the walk corners
    // itself it teleports to a random pixel already on the curve.
    Grid<uint8_t> on_curve(labels.height(), labels.width(), 0);
    auto accepted_neighbors = [&](int r, int c) {
      int n = 0;
      for (int k = 0; k < 8; ++k) {
        int nr = r + dr8[k], nc = c + dc8[k];
        if (on_curve.in_bounds(nr, nc) && on_curve(nr, nc)) ++n;
      }
      return n;
    };

    auto start = region[rng.uniform_int(static_cast<int64_t>(region.size()))];
    std::vector<std::pair<int, int>> curve = {start};
    on_curve(start.first, start.second) = 1;
    auto current = start;

    int attempts = 0;
    const int max_attempts = 60 * target;
    while (static_cast<int>(curve.size()) < target && attempts < max_attempts) {
      ++attempts;
      int k = static_cast<int>(rng.uniform_int(8));
      int nr = current.first + dr8[k];
      int nc = current.second + dc8[k];
      if (!labels.in_bounds(nr, nc) || labels(nr, nc) != cls || on_curve(nr, nc) ||
          accepted_neighbors(nr, nc) > 2) {
        current = curve[rng.uniform_int(static_cast<int64_t>(curve.size()))];
        continue;
      }
      on_curve(nr, nc) = 1;
      curve.emplace_back(nr, nc);
      current = {nr, nc};
    }

    for (auto [r, c] : curve) scribbles(r, c) = static_cast<uint8_t>(cls);
  }

  return scribbles;
}

}  // namespace medcl
