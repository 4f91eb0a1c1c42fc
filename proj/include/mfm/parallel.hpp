#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mfm {

/// Fixed work granularity. Chunk boundaries never depend on the worker
/// count, which keeps every floating-point reduction order identical.
inline constexpr std::size_t kChunk = 32;

struct ChunkRange {
  std::size_t index;
  std::size_t begin;
  std::size_t end;
};

inline std::size_t chunk_count(std::size_t n) {
  return (n + kChunk - 1) / kChunk;
}

inline ChunkRange chunk_range(std::size_t c, std::size_t n) {
  const std::size_t b = c * kChunk;
  return {c, b, std::min(n, b + kChunk)};
}

/// Runs fn over the fixed chunks of [0, n). Chunks are dealt round-robin to
/// `workers` threads; the first exception thrown is rethrown.
inline void parallel_chunks(std::size_t n, int workers,
                            const std::function<void(const ChunkRange&)>& fn) {
  const std::size_t chunks = chunk_count(n);
  const std::size_t w =
      std::max<std::size_t>(1, std::min<std::size_t>(workers, chunks));
  if (w <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(chunk_range(c, n));
    return;
  }
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < chunks; c += w) fn(chunk_range(c, n));
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

inline int default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace mfm
