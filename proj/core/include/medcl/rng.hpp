#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace medcl {

// All stochastic code draws through this wrapper. std::mt19937_64's output
// sequence is pinned by the standard, but the std::*_distribution adapters
// are not, so the distributions here are hand-rolled to keep runs bit-exact
// across compilers and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0,1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n). n must be positive. Uses rejection sampling so
  // the result is exactly uniform, not merely close.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller. One value cached between calls.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape, 1) by Marsaglia-Tsang squeeze; shape > 0.
  double gamma(double shape);

  // Beta(a, b) as Ga/(Ga+Gb).
  double beta(double a, double b);

  // Fisher-Yates shuffle over [first, last).
  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (decltype(n) i = n - 1; i > 0; --i) {
      auto j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// Deterministic sub-seed derivation. Streams for different purposes are
// decorrelated by hashing the context labels into the master seed, so e.g.
// (seed, epoch, step) always yields the same batch regardless of worker
// count or execution order.
uint64_t derive_seed(uint64_t master, std::string_view tag);
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a);
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a, uint64_t b);

}  // namespace medcl
