#pragma once

#include <algorithm>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace mlc {

/// Runs body(chunk, begin, end) over `threads` contiguous chunks of [0, n).
/// Chunk boundaries depend only on (n, threads), so callers that reduce
/// per-chunk partials in chunk order get results that are reproducible for
/// a fixed thread count.
template <typename Body>
void parallel_chunks(Eigen::Index n, int threads, Body&& body) {
  const int t = std::max(1, std::min<int>(threads, static_cast<int>(std::max<Eigen::Index>(n, 1))));
  if (t == 1) {
    body(0, Eigen::Index{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t));
  for (int c = 0; c < t; ++c) {
    const Eigen::Index begin = n * c / t;
    const Eigen::Index end = n * (c + 1) / t;
    pool.emplace_back([&body, c, begin, end] { body(c, begin, end); });
  }
  for (auto& th : pool) th.join();
}

inline int chunk_count(Eigen::Index n, int threads) {
  return std::max(1, std::min<int>(threads, static_cast<int>(std::max<Eigen::Index>(n, 1))));
}

}  // namespace mlc
