// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace sgrf {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

/// Runs fn(chunk_index, begin, end) over [0, n) split into n_chunks contiguous
/// ranges, executed by up to n_threads workers. The chunk decomposition is a
/// function of n and n_chunks only, never of the thread count, so callers that
/// accumulate into per-chunk buffers and reduce them in chunk order get results
/// independent of the worker count.
template <class Fn>
void parallel_chunks(std::size_t n, int n_chunks, int n_threads, Fn&& fn) {
  if (n == 0) return;
  if (n_chunks < 1) n_chunks = 1;
  if (static_cast<std::size_t>(n_chunks) > n) n_chunks = static_cast<int>(n);
  if (n_threads < 1) n_threads = 1;

  auto chunk_range = [&](int c) {
    const std::size_t begin = n * static_cast<std::size_t>(c) / n_chunks;
    const std::size_t end = n * static_cast<std::size_t>(c + 1) / n_chunks;
    return std::pair<std::size_t, std::size_t>(begin, end);
  };

  if (n_threads == 1 || n_chunks == 1) {
    for (int c = 0; c < n_chunks; ++c) {
      auto [b, e] = chunk_range(c);
      fn(c, b, e);
    }
    return;
  }

  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= n_chunks) return;
      auto [b, e] = chunk_range(c);
      fn(c, b, e);
    }
  };
  std::vector<std::thread> pool;
  const int spawn = std::min(n_threads, n_chunks) - 1;
  pool.reserve(spawn);
  for (int i = 0; i < spawn; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

}  // namespace sgrf
