#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dbsde::parallel {

/// Paths per work item. Chunk boundaries depend only on the problem size, so
/// per-chunk partial sums combined in chunk order give thread-count-independent
/// results.
inline constexpr std::size_t kChunk = 4096;

inline std::size_t chunk_count(std::size_t n) { return (n + kChunk - 1) / kChunk; }

inline unsigned worker_count() {
  if (const char* env = std::getenv("DBSDE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(chunk, begin, end) for every chunk of [0, n). Work items must write
/// to disjoint slots.
template <typename Fn>
void for_chunks(std::size_t n, Fn&& fn) {
  const std::size_t chunks = chunk_count(n);
  if (chunks == 0) return;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), chunks));
  auto body = [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    fn(c, begin, std::min(n, begin + kChunk));
  };
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < chunks; c = next++) {
        try {
          body(c);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Per-index map over [0, n).
template <typename Fn>
void for_each_index(std::size_t n, Fn&& fn) {
  for_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace dbsde::parallel
