#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace ccf {

// Worker count: CCF_THREADS when set (clamped to [1, 64]), otherwise the
// hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Work is split across the worker pool; callers
// write results into per-index slots so scheduling never affects output.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

template <typename T, typename Fn>
std::vector<T> parallel_map(std::size_t n, Fn&& fn) {
  std::vector<T> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = fn(i); });
  return out;
}

}  // namespace ccf
