#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace medcl {

// Effective worker count: `requested` if positive, else hardware concurrency.
// MEDCL_DETERMINISTIC=1 forces a single worker regardless.
inline int effective_jobs(int requested) {
  const char* env = std::getenv("MEDCL_DETERMINISTIC");
  if (env && env[0] == '1' && env[1] == '\0') return 1;
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Static block partition of [0, n) over `jobs` threads. The caller's body
// must only write to per-index or per-chunk state; results that feed into a
// reduction must be combined afterwards in chunk order so that thread count
// never changes the arithmetic.
inline void parallel_for(int64_t n, int jobs, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  jobs = static_cast<int>(std::max<int64_t>(1, std::min<int64_t>(jobs, n)));
  if (jobs == 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(jobs);
  int64_t chunk = (n + jobs - 1) / jobs;
  for (int t = 0; t < jobs; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : threads) th.join();
}

}  // namespace medcl
