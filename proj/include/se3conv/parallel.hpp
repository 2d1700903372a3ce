#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace se3conv {

// Process-wide worker cap (CLI --threads). 0 = hardware concurrency.
inline int& max_threads() {
  static int n = 0;
  return n;
}

inline int effective_threads() {
  int n = max_threads();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}

// Fork-join loop over [0, n). Each index must write disjoint outputs; with
// that contract results are identical for any thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(effective_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace se3conv
