#pragma once

#include <thread>
#include <vector>

namespace lodo {

/// Runs fn(i) for i in [begin, end). Each index writes only its own outputs,
/// so the result is identical for any thread count.
template <typename Fn>
void parallel_for(int begin, int end, int threads, Fn&& fn) {
  if (end <= begin) return;
  if (threads <= 1 || end - begin < 2 * threads) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  int total = end - begin;
  int chunk = (total + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int lo = begin + t * chunk;
    int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace lodo
