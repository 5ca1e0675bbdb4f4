#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace cmpnet {

/// Thread cap from the CMPNET_THREADS environment variable; defaults to 1 so
/// runs stay on one core and bit-reproducible by default. Parallel sections
/// are written so any cap yields the same bits as the serial path.
int max_threads();

// Runs fn(i) for i in [0, n); items must be independent. A cap of 1 degrades
// to a plain loop with no thread spawns.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int threads = std::min(max_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&fn, t, n, threads] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  for (auto& worker : pool) worker.join();
}

}  // namespace cmpnet
