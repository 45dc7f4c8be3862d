#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "medcl/mixing.hpp"
#include "medcl/rng.hpp"

using namespace medcl;

namespace {

ImageF random_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  ImageF img(h, w);
  for (auto& v : img) v = rng.uniform();
  return img;
}

MixedSample make_mixed(int h, int w, uint64_t seed, const SubsetSchedule& schedule) {
  MixedSample s;
  s.image = random_image(h, w, seed);
  s.box = sample_bbox(h, w, 0.2, 0.5, seed + 1);
  s.schedule = schedule;
  s.provenance.source_ids = {static_cast<int>(seed)};
  return s;
}

}  // namespace

TEST_CASE("mix ratio sampling: Beta(1,1) has mean one half") {
  double sum = 0.0;
  for (uint64_t i = 0; i < 100000; ++i) {
    double v = sample_mix_ratio(1.0, i);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    sum += v;
  }
  double mean = sum / 100000;
  CHECK(mean > 0.49);
  CHECK(mean < 0.51);
}

TEST_CASE("mix ratio sampling is deterministic and rejects alpha <= 0") {
  CHECK(sample_mix_ratio(0.7, 42) == sample_mix_ratio(0.7, 42));
  CHECK_THROWS_AS(sample_mix_ratio(0.0, 1), Error);
  CHECK_THROWS_AS(sample_mix_ratio(-1.0, 1), Error);
}

TEST_CASE("rotation by zero degrees is the exact identity") {
  auto img = random_image(17, 23, 5);
  auto out = rotate(img, 0.0);
  CHECK(out == img);
}

TEST_CASE("rotation of a constant image is that constant") {
  ImageF img(16, 16, 0.37);
  for (double theta : {-30.0, -7.5, 12.0, 45.0}) {
    auto out = rotate(img, theta);
    for (double v : out) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
}

TEST_CASE("rotation round trip stays close on a smooth image away from borders") {
  const int n = 64;
  ImageF img(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      img(r, c) = 0.5 + 0.4 * std::sin(2.0 * M_PI * r / n) * std::cos(2.0 * M_PI * c / n);

  auto back = rotate(rotate(img, 10.0), -10.0);
  const int margin = 8;
  double max_dev = 0.0;
  for (int r = margin; r < n - margin; ++r)
    for (int c = margin; c < n - margin; ++c)
      max_dev = std::max(max_dev, std::abs(back(r, c) - img(r, c)));
  CHECK(max_dev <= 0.05);
}

TEST_CASE("rotation rejects angles past 45 degrees") {
  auto img = random_image(8, 8, 1);
  CHECK_THROWS_AS(rotate(img, 46.0), Error);
}

TEST_CASE("intra_mix matches an independent scalar evaluation") {
  auto x = random_image(8, 8, 11);
  auto box = sample_bbox(8, 8, 0.2, 0.4, 3);
  const double bp = 0.3;
  const double theta = 9.0;

  auto got = intra_mix(x, box, bp, theta);

  // Distributed form of the same formula, evaluated pixel by pixel.
  auto rot = rotate(x, theta);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double ib = box.mask(r, c);
      double want = ib * x(r, c) + (1.0 - ib) * bp * x(r, c) + (1.0 - ib) * (1.0 - bp) * rot(r, c);
      CHECK(got(r, c) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("intra_mix edge cases collapse to the input") {
  auto x = random_image(12, 12, 2);

  SUBCASE("beta' = 1") {
    auto box = sample_bbox(12, 12, 0.1, 0.3, 7);
    CHECK(intra_mix(x, box, 1.0, 13.0) == x);
  }
  SUBCASE("box covers everything") {
    auto box = sample_bbox(12, 12, 1.0, 1.0, 7);
    CHECK(intra_mix(x, box, 0.2, 13.0) == x);
  }
  SUBCASE("theta = 0") {
    auto box = sample_bbox(12, 12, 0.1, 0.3, 7);
    CHECK(intra_mix(x, box, 0.2, 0.0) == x);
  }
}

TEST_CASE("intra_mix keeps values in range") {
  auto x = random_image(16, 16, 8);
  auto box = sample_bbox(16, 16, 0.2, 0.5, 9);
  auto out = intra_mix(x, box, 0.45, -12.0);
  for (double v : out) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("bbox sampler hits the requested area range every time") {
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    auto box = sample_bbox(64, 48, 0.1, 0.3, seed);
    double frac = static_cast<double>(box.area()) / (64 * 48);
    CAPTURE(seed);
    CHECK(frac >= 0.1);
    CHECK(frac <= 0.3);
  }
}

TEST_CASE("bbox mask is one exactly inside the coordinates") {
  auto box = sample_bbox(20, 30, 0.2, 0.4, 77);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 30; ++c) {
      bool inside = r >= box.row0 && r < box.row1 && c >= box.col0 && c < box.col1;
      CHECK(box.mask(r, c) == (inside ? 1 : 0));
    }
}

TEST_CASE("bbox full-area range gives the all-ones mask") {
  auto box = sample_bbox(16, 16, 1.0, 1.0, 5);
  CHECK(box.area() == 256);
  for (uint8_t v : box.mask) CHECK(v == 1);
}

TEST_CASE("bbox sampling is reproducible") {
  auto a = sample_bbox(32, 32, 0.1, 0.5, 123);
  auto b = sample_bbox(32, 32, 0.1, 0.5, 123);
  CHECK(a.row0 == b.row0);
  CHECK(a.col0 == b.col0);
  CHECK(a.row1 == b.row1);
  CHECK(a.col1 == b.col1);
}

TEST_CASE("subset schedules are nested permutations") {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto sched = sample_subsets(5, seed);
    std::set<int> all(sched.perm.begin(), sched.perm.end());
    CHECK(all == std::set<int>{1, 2, 3, 4, 5});
    for (int k = 2; k < 5; ++k) {
      auto smaller = sched.omega(k);
      auto larger = sched.omega(k + 1);
      CHECK(smaller.size() == static_cast<size_t>(k));
      std::set<int> larger_set(larger.begin(), larger.end());
      for (int v : smaller) CHECK(larger_set.contains(v));
    }
  }
}

TEST_CASE("m=2 schedule has the single subset {1,2}") {
  auto sched = sample_subsets(2, 99);
  auto omega2 = sched.omega(2);
  CHECK(std::set<int>(omega2.begin(), omega2.end()) == std::set<int>{1, 2});
}

TEST_CASE("all three m=3 pair subsets occur across seeds") {
  std::set<std::set<int>> seen;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    auto omega2 = sample_subsets(3, seed).omega(2);
    seen.insert(std::set<int>(omega2.begin(), omega2.end()));
  }
  CHECK(seen.size() == 3);
}

TEST_CASE("subset sampling rejects m < 2") {
  CHECK_THROWS_AS(sample_subsets(1, 0), Error);
}

TEST_CASE("inter_mix matches an independent scalar evaluation") {
  auto sched = sample_subsets(3, 4);
  auto s1 = make_mixed(8, 8, 20, sched);
  auto s2 = make_mixed(8, 8, 30, sched);
  const double beta = 0.35;

  auto out = inter_mix(s1, s2, beta);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double want = beta * s1.image(r, c) + (1.0 - beta) * s2.image(r, c);
      CHECK(out.image(r, c) == doctest::Approx(want).epsilon(1e-12));
      CHECK(out.box.mask(r, c) == std::max(s1.box.mask(r, c), s2.box.mask(r, c)));
    }
  CHECK(out.schedule == sched);
  CHECK(out.provenance.beta == beta);
}

TEST_CASE("inter_mix at beta=1 keeps the first image but unions the boxes") {
  auto sched = sample_subsets(3, 4);
  auto s1 = make_mixed(10, 10, 1, sched);
  auto s2 = make_mixed(10, 10, 2, sched);
  auto out = inter_mix(s1, s2, 1.0);
  CHECK(out.image == s1.image);
  int union_area = 0;
  for (uint8_t v : out.box.mask) union_area += v;
  int expect = 0;
  for (int i = 0; i < 100; ++i) {
    expect += std::max(s1.box.mask.data()[i], s2.box.mask.data()[i]);
  }
  CHECK(union_area == expect);
}

TEST_CASE("inter_mix of a sample with itself is that sample") {
  auto sched = sample_subsets(3, 8);
  auto s = make_mixed(9, 9, 6, sched);
  auto out = inter_mix(s, s, 0.5);
  for (int i = 0; i < 81; ++i) {
    CHECK(out.image.data()[i] == doctest::Approx(s.image.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("union of two disjoint boxes has additive area") {
  auto sched = sample_subsets(2, 0);
  MixedSample s1, s2;
  s1.image.reset(16, 16);
  s2.image.reset(16, 16);
  s1.schedule = s2.schedule = sched;

  s1.box.mask.reset(16, 16, 0);
  s1.box.row0 = 0; s1.box.col0 = 0; s1.box.row1 = 4; s1.box.col1 = 4;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) s1.box.mask(r, c) = 1;

  s2.box.mask.reset(16, 16, 0);
  s2.box.row0 = 10; s2.box.col0 = 10; s2.box.row1 = 15; s2.box.col1 = 13;
  for (int r = 10; r < 15; ++r)
    for (int c = 10; c < 13; ++c) s2.box.mask(r, c) = 1;

  auto out = inter_mix(s1, s2, 0.6);
  int area = 0;
  for (uint8_t v : out.box.mask) area += v;
  CHECK(area == 16 + 15);
}

TEST_CASE("inter_mix rejects mismatched schedules") {
  auto s1 = make_mixed(8, 8, 1, sample_subsets(3, 100));
  SubsetSchedule other = sample_subsets(3, 100);
  std::swap(other.perm[0], other.perm[1]);
  auto s2 = make_mixed(8, 8, 2, other);
  CHECK_THROWS_AS(inter_mix(s1, s2, 0.5), Error);
}

TEST_CASE("mix_targets blends channelwise") {
  Tensor3 y1(2, 1, 1), y2(2, 1, 1);
  y1(0, 0, 0) = 0.8;
  y2(0, 0, 0) = 0.4;
  y1(1, 0, 0) = 1.0;
  y2(1, 0, 0) = 0.0;

  auto t = mix_targets(y1, y2, 0.25);
  CHECK(t.target(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.target(1, 0, 0) == doctest::Approx(0.25).epsilon(1e-12));

  auto t1 = mix_targets(y1, y2, 1.0);
  CHECK(t1.target(0, 0, 0) == 0.8);
  auto teq = mix_targets(y1, y1, 0.31);
  CHECK(teq.target(0, 0, 0) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("multi_crop identity configuration returns the source") {
  PhantomSpec spec;
  spec.height = 32;
  spec.width = 32;
  auto sample = gen_structure_sample(spec, 3);

  CropConfig cfg;
  cfg.global_count = 1;
  cfg.global_lo = cfg.global_hi = 1.0;
  cfg.local_count = 0;
  auto crops = multi_crop(sample, cfg, 5);
  REQUIRE(crops.size() == 1);
  CHECK(crops[0].image == sample.image);
  CHECK(crops[0].labels == sample.labels);
  CHECK(crops[0].scribbles == sample.scribbles);
  CHECK(crops[0].present_classes == sample.present_classes);
}

TEST_CASE("crops keep scribbles consistent with their labels") {
  PhantomSpec spec;
  spec.height = 48;
  spec.width = 48;
  auto sample = gen_structure_sample(spec, 9);

  CropConfig cfg;  // default 4 global + 6 local
  auto crops = multi_crop(sample, cfg, 21);
  REQUIRE(crops.size() == 10);
  for (const auto& crop : crops) {
    CHECK(crop.image.height() == 48);
    for (int r = 0; r < crop.labels.height(); ++r)
      for (int c = 0; c < crop.labels.width(); ++c)
        if (crop.scribbles(r, c) != kUnlabeled) {
          CHECK(crop.scribbles(r, c) == crop.labels(r, c));
        }
    std::set<int> occurring;
    for (uint8_t v : crop.labels)
      if (v > 0) occurring.insert(v);
    CHECK(crop.present_classes == occurring);
  }
}

TEST_CASE("multi_crop is deterministic in the seed") {
  PhantomSpec spec;
  spec.height = 32;
  spec.width = 32;
  auto sample = gen_structure_sample(spec, 1);
  CropConfig cfg;
  auto a = multi_crop(sample, cfg, 55);
  auto b = multi_crop(sample, cfg, 55);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
