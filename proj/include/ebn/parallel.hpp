#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ebn {

// Worker cap: min(hardware threads, EBN_THREADS when set).
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("EBN_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) hw = std::min(hw, cap);
  }
  return hw;
}

// Splits [0, n) into contiguous chunks, one worker per chunk. Each invocation
// of fn owns a disjoint index range, so results are independent of the worker
// count; there is no cross-thread reduction.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  int workers = worker_count();
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    fn(0, n);
    return;
  }
  workers = static_cast<int>(std::min<std::int64_t>(workers, n));
  std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    std::int64_t lo = w * chunk;
    std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace ebn
