#include "medcl/rng.hpp"

#include <cmath>

#include "medcl/error.hpp"

namespace medcl {

int64_t Rng::uniform_int(int64_t n) {
  require(n > 0, ErrorCode::InvalidArgument, "uniform_int needs n > 0");
  uint64_t un = static_cast<uint64_t>(n);
  // Largest multiple of n that fits in 64 bits; draws past it are rejected.
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

double Rng::normal() {
  if (have_cached_normal_) {
    have_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller on (0,1] to avoid log(0).
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(theta);
  have_cached_normal_ = true;
  return r * std::cos(theta);
}

double Rng::gamma(double shape) {
  require(shape > 0.0, ErrorCode::InvalidArgument, "gamma needs shape > 0");
  if (shape < 1.0) {
    // Boost to shape+1 and scale back (Marsaglia-Tsang section 6).
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::beta(double a, double b) {
  double ga = gamma(a);
  double gb = gamma(b);
  double s = ga + gb;
  if (s <= 0.0) return 0.5;  // both gammas underflowed; split the difference
  return ga / s;
}

namespace {

// splitmix64 finalizer: cheap, well-mixed, and fully portable.
uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t hash_tag(std::string_view tag) {
  // FNV-1a over the label bytes.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

uint64_t derive_seed(uint64_t master, std::string_view tag) {
  return mix(master ^ hash_tag(tag));
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a) {
  return mix(derive_seed(master, tag) ^ mix(a));
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a, uint64_t b) {
  return mix(derive_seed(master, tag, a) ^ mix(mix(b)));
}

}  // namespace medcl
