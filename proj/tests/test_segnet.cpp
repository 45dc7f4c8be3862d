#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "medcl/error.hpp"
#include "medcl/rng.hpp"
#include "medcl/segnet.hpp"

using namespace medcl;
namespace fs = std::filesystem;

namespace {

ModelSpec desk_spec() {
  ModelSpec spec;
  spec.input_size = 64;
  spec.base_width = 8;
  spec.depth = 3;
  spec.num_classes = 3;
  spec.seed = 17;
  return spec;
}

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.input_size = 16;
  spec.base_width = 4;
  spec.depth = 2;
  spec.num_classes = 3;
  spec.seed = 5;
  return spec;
}

ImageF random_image(int size, uint64_t seed) {
  Rng rng(seed);
  ImageF img(size, size);
  for (double& v : img) v = rng.uniform();
  return img;
}

// Scalar probe for finite differences: a fixed random weighting of every
// output probability. Its parameter gradient is exactly backward() fed with
// the weight tensors.
double weighted_output_sum(const ModelParams& params, const ImageF& img, const Tensor3& wp,
                           const Tensor3& wc) {
  const ForwardOutput out = forward(params, img);
  double s = 0.0;
  for (size_t i = 0; i < out.probs.size(); ++i) s += wp.data()[i] * out.probs.data()[i];
  for (size_t i = 0; i < out.class_probs.size(); ++i) {
    s += wc.data()[i] * out.class_probs.data()[i];
  }
  return s;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("medcl_segnet_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Replace a same-length substring inside the JSON header of a checkpoint.
void patch_header(const fs::path& p, const std::string& from, const std::string& to) {
  REQUIRE(from.size() == to.size());
  std::string bytes = slurp(p);
  REQUIRE(bytes.size() > 8);
  uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) {
    hlen |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  }
  const auto pos = bytes.find(from, 8);
  REQUIRE(pos != std::string::npos);
  REQUIRE(pos + from.size() <= 8 + hlen);
  bytes.replace(pos, from.size(), to);
  spit(p, bytes);
}

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error to be thrown");
  return ErrorCode::InternalError;
}

}  // namespace

TEST_CASE("parameter count is pinned for the desk-scale architecture") {
  const ModelParams params = init_model(desk_spec());
  CHECK(params.values.size() == 122014);
}

TEST_CASE("parameter count is pinned for the tiny architecture") {
  const ModelParams params = init_model(tiny_spec());
  CHECK(params.values.size() == 7490);
}

TEST_CASE("parameter layout is contiguous, complete, and named") {
  const ModelParams params = init_model(desk_spec());
  int64_t cursor = 0;
  for (const ParamEntry& e : params.layout) {
    CHECK(e.offset == cursor);
    int64_t prod = 1;
    for (int d : e.shape) prod *= d;
    CHECK(prod == e.count);
    cursor += e.count;
  }
  CHECK(cursor == params.values.size());

  REQUIRE(!params.layout.empty());
  CHECK(params.layout.front().name == "enc0.conv1.w");
  CHECK(params.layout.front().shape == std::vector<int>{8, 1, 3, 3});
  CHECK(params.layout.back().name == "head_comb.b");
  CHECK(params.layout.back().shape == std::vector<int>{2});

  // The first decoder block sees the bottleneck output stacked on the skip.
  const auto it = std::find_if(params.layout.begin(), params.layout.end(),
                               [](const ParamEntry& e) { return e.name == "dec2.conv1.w"; });
  REQUIRE(it != params.layout.end());
  CHECK(it->shape == std::vector<int>{32, 96, 3, 3});
}

TEST_CASE("initialization is deterministic in the seed and fan-in scaled") {
  const ModelParams a = init_model(desk_spec());
  const ModelParams b = init_model(desk_spec());
  CHECK(std::memcmp(a.values.data(), b.values.data(),
                    sizeof(double) * static_cast<size_t>(a.values.size())) == 0);

  ModelSpec other = desk_spec();
  other.seed = 18;
  const ModelParams c = init_model(other);
  CHECK((a.values - c.values).norm() > 0.0);

  // Biases start at zero; a large weight tensor should show the fan-in scale.
  for (const ParamEntry& e : a.layout) {
    if (e.name.ends_with(".b")) {
      for (int64_t j = 0; j < e.count; ++j) CHECK(a.values[e.offset + j] == 0.0);
    }
    if (e.name == "bott.conv1.w") {
      const double expect = std::sqrt(2.0 / (32.0 * 9.0));
      double ss = 0.0;
      for (int64_t j = 0; j < e.count; ++j) ss += a.values[e.offset + j] * a.values[e.offset + j];
      const double stddev = std::sqrt(ss / static_cast<double>(e.count));
      CHECK(stddev == doctest::Approx(expect).epsilon(0.05));
    }
  }
}

TEST_CASE("all-zero parameters give uniform class probabilities") {
  ModelParams params = init_model(tiny_spec());
  params.values.setZero();
  const ImageF img = random_image(16, 3);
  const ForwardOutput out = forward(params, img);
  const int m = tiny_spec().num_classes;
  REQUIRE(out.class_probs.channels() == m + 1);
  REQUIRE(out.probs.channels() == 2 * m - 1);
  for (size_t i = 0; i < out.class_probs.size(); ++i) {
    CHECK(out.class_probs.data()[i] == doctest::Approx(1.0 / (m + 1)).epsilon(1e-12));
  }
  // Single-class rows mirror the softmax; combined rows are sigmoid(0).
  for (int c = 0; c < m; ++c) {
    CHECK(out.probs(c, 7, 9) == doctest::Approx(1.0 / (m + 1)).epsilon(1e-12));
  }
  for (int c = m; c < 2 * m - 1; ++c) {
    CHECK(out.probs(c, 7, 9) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("softmax head is normalized and every output is a probability") {
  const ModelParams params = init_model(tiny_spec());
  const ImageF img = random_image(16, 11);
  const ForwardOutput out = forward(params, img);
  const int m = params.spec.num_classes;
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      double total = 0.0;
      for (int ch = 0; ch <= m; ++ch) total += out.class_probs(ch, r, c);
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
  for (size_t i = 0; i < out.probs.size(); ++i) {
    CHECK(out.probs.data()[i] >= 0.0);
    CHECK(out.probs.data()[i] <= 1.0);
  }
  // Single-class channel c must equal softmax channel c+1 exactly.
  for (int c = 0; c < m; ++c) {
    CHECK(std::memcmp(out.probs.plane(c), out.class_probs.plane(c + 1),
                      sizeof(double) * out.probs.plane_size()) == 0);
  }
}

TEST_CASE("forward is deterministic") {
  const ModelParams params = init_model(tiny_spec());
  const ImageF img = random_image(16, 23);
  const ForwardOutput a = forward(params, img);
  const ForwardOutput b = forward(params, img);
  CHECK(std::memcmp(a.probs.data(), b.probs.data(), sizeof(double) * a.probs.size()) == 0);
  CHECK(std::memcmp(a.class_probs.data(), b.class_probs.data(),
                    sizeof(double) * a.class_probs.size()) == 0);
}

TEST_CASE("parameter gradients agree with central differences") {
  const ModelSpec spec = tiny_spec();
  ModelParams params = init_model(spec);
  Rng rng(derive_seed(99, "segnet-fd"));
  const ImageF img = random_image(16, 31);
  const int m = spec.num_classes;
  Tensor3 wp(2 * m - 1, 16, 16), wc(m + 1, 16, 16);
  for (size_t i = 0; i < wp.size(); ++i) wp.data()[i] = rng.uniform(-1.0, 1.0);
  for (size_t i = 0; i < wc.size(); ++i) wc.data()[i] = rng.uniform(-1.0, 1.0);

  ForwardCache cache;
  forward(params, img, &cache);
  const Eigen::VectorXd grad = backward(params, cache, wp, wc);
  REQUIRE(grad.size() == params.values.size());

  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const auto idx = rng.uniform_int(params.values.size());
    ModelParams probe = params;
    probe.values[idx] = params.values[idx] + h;
    const double up = weighted_output_sum(probe, img, wp, wc);
    probe.values[idx] = params.values[idx] - h;
    const double dn = weighted_output_sum(probe, img, wp, wc);
    const double fd = (up - dn) / (2.0 * h);
    const double denom = std::max({std::abs(grad[idx]), std::abs(fd), 1e-6});
    CHECK(std::abs(grad[idx] - fd) / denom <= 1e-4);
  }
}

TEST_CASE("backward is linear in the output gradient") {
  const ModelSpec spec = tiny_spec();
  const ModelParams params = init_model(spec);
  const ImageF img = random_image(16, 41);
  const int m = spec.num_classes;
  Rng rng(derive_seed(7, "segnet-linear"));
  Tensor3 g1p(2 * m - 1, 16, 16), g1c(m + 1, 16, 16);
  Tensor3 g2p(2 * m - 1, 16, 16), g2c(m + 1, 16, 16);
  for (size_t i = 0; i < g1p.size(); ++i) {
    g1p.data()[i] = rng.normal();
    g2p.data()[i] = rng.normal();
  }
  for (size_t i = 0; i < g1c.size(); ++i) {
    g1c.data()[i] = rng.normal();
    g2c.data()[i] = rng.normal();
  }
  Tensor3 gsp = g1p, gsc = g1c;
  for (size_t i = 0; i < gsp.size(); ++i) gsp.data()[i] += g2p.data()[i];
  for (size_t i = 0; i < gsc.size(); ++i) gsc.data()[i] += g2c.data()[i];

  ForwardCache cache;
  forward(params, img, &cache);
  const Eigen::VectorXd a = backward(params, cache, g1p, g1c);
  const Eigen::VectorXd b = backward(params, cache, g2p, g2c);
  const Eigen::VectorXd combined = backward(params, cache, gsp, gsc);
  CHECK((a + b - combined).norm() <= 1e-9 * (1.0 + combined.norm()));
}

TEST_CASE("zero output gradient yields exactly zero parameter gradient") {
  const ModelSpec spec = tiny_spec();
  const ModelParams params = init_model(spec);
  const ImageF img = random_image(16, 43);
  const int m = spec.num_classes;
  ForwardCache cache;
  forward(params, img, &cache);
  const Tensor3 zp(2 * m - 1, 16, 16), zc(m + 1, 16, 16);
  const Eigen::VectorXd grad = backward(params, cache, zp, zc);
  CHECK(grad.norm() == 0.0);
}

TEST_CASE("backward rejects an empty or stale cache") {
  const ModelSpec spec = tiny_spec();
  ModelParams params = init_model(spec);
  const ImageF img = random_image(16, 47);
  const int m = spec.num_classes;
  const Tensor3 gp(2 * m - 1, 16, 16), gc(m + 1, 16, 16);

  ForwardCache empty;
  CHECK(error_code_of([&] { backward(params, empty, gp, gc); }) == ErrorCode::InvalidArgument);

  ForwardCache cache;
  forward(params, img, &cache);
  params.values[100] += 0.5;
  CHECK(error_code_of([&] { backward(params, cache, gp, gc); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("shape and spec validation errors") {
  const ModelSpec spec = tiny_spec();
  const ModelParams params = init_model(spec);
  const int m = spec.num_classes;

  CHECK(error_code_of([&] { forward(params, random_image(32, 1)); }) ==
        ErrorCode::ShapeMismatch);

  ForwardCache cache;
  forward(params, random_image(16, 2), &cache);
  const Tensor3 bad(2 * m, 16, 16), gc(m + 1, 16, 16);
  CHECK(error_code_of([&] { backward(params, cache, bad, gc); }) == ErrorCode::ShapeMismatch);

  ModelSpec odd = spec;
  odd.input_size = 30;  // not divisible by 2^depth
  CHECK(error_code_of([&] { init_model(odd); }) == ErrorCode::ConfigError);
  ModelSpec shallow = spec;
  shallow.depth = 1;
  CHECK(error_code_of([&] { init_model(shallow); }) == ErrorCode::ConfigError);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
  TempDir dir;
  const fs::path file = dir.path / "model.ckpt";
  const ModelParams params = init_model(tiny_spec());
  save_model(params, file);
  const ModelParams loaded = load_model(file);
  CHECK(loaded.spec == params.spec);
  CHECK(loaded.layout == params.layout);
  REQUIRE(loaded.values.size() == params.values.size());
  CHECK(std::memcmp(loaded.values.data(), params.values.data(),
                    sizeof(double) * static_cast<size_t>(params.values.size())) == 0);

  // And the loaded model must produce identical outputs.
  const ImageF img = random_image(16, 51);
  const ForwardOutput a = forward(params, img);
  const ForwardOutput b = forward(loaded, img);
  CHECK(std::memcmp(a.probs.data(), b.probs.data(), sizeof(double) * a.probs.size()) == 0);
}

TEST_CASE("checkpoint loading rejects damaged or foreign files") {
  TempDir dir;
  CHECK(error_code_of([&] { load_model(dir.path / "absent.ckpt"); }) == ErrorCode::IoError);

  const fs::path garbage = dir.path / "garbage.ckpt";
  spit(garbage, "this is definitely not a checkpoint file");
  CHECK(error_code_of([&] { load_model(garbage); }) == ErrorCode::FormatError);

  const ModelParams params = init_model(tiny_spec());

  const fs::path versioned = dir.path / "versioned.ckpt";
  save_model(params, versioned);
  patch_header(versioned, "\"format_version\":1", "\"format_version\":9");
  CHECK(error_code_of([&] { load_model(versioned); }) == ErrorCode::VersionMismatch);

  const fs::path kinded = dir.path / "kinded.ckpt";
  save_model(params, kinded);
  patch_header(kinded, "\"kind\":\"model\"", "\"kind\":\"modex\"");
  CHECK(error_code_of([&] { load_model(kinded); }) == ErrorCode::FormatError);

  const fs::path truncated = dir.path / "truncated.ckpt";
  save_model(params, truncated);
  std::string bytes = slurp(truncated);
  spit(truncated, bytes.substr(0, bytes.size() - 64));
  CHECK(error_code_of([&] { load_model(truncated); }) == ErrorCode::FormatError);
}
