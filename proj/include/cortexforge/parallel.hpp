#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cortexforge {

// Lane cap: CORTEXFORGE_THREADS, 0 or unset = auto.
inline int max_lanes() {
  static const int cached = [] {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    hw = std::min(hw, 8);
    if (const char* env = std::getenv("CORTEXFORGE_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return v;
    }
    return hw;
  }();
  return cached;
}

// Splits [0, n) into `lanes` contiguous chunks and runs fn(lane, begin, end)
// on each. Reductions stay deterministic for a fixed lane count as long as
// callers combine per-lane results in lane order.
inline void parallel_lanes(std::size_t n, int lanes,
                           const std::function<void(int, std::size_t, std::size_t)>& fn) {
  lanes = std::max(1, std::min<int>(lanes, int(n)));
  if (lanes == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(lanes));
  std::size_t chunk = (n + std::size_t(lanes) - 1) / std::size_t(lanes);
  for (int l = 0; l < lanes; ++l) {
    std::size_t b = std::size_t(l) * chunk;
    std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(fn, l, b, e);
  }
  for (auto& t : pool) t.join();
}

}  // namespace cortexforge
