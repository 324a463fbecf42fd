#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace ccbench {

/// Runs fn(i) for i in [0, n). With workers > 1 the index range is split into
/// contiguous chunks; fn must write only to its own slot so results do not
/// depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> threads;
  threads.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += nw) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace ccbench
