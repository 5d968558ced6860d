#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lscrf {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `index` of a run seeded with `seed`. Hashing the seed
/// first keeps runs with neighbouring seeds from sharing streams.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(splitmix64(seed) + index); }

/// Calls fn(i) for every i in [0, n) using up to `jobs` threads.
/// fn must only write state owned by index i; results are then independent
/// of the thread count.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (std::size_t t = 0; t + 1 < workers; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Reduces over [0, n) in fixed-size chunks. Chunk boundaries do not depend
/// on `jobs` and partial results are combined in chunk order, so the result
/// is bit-identical for every thread count.
template <class T, class MapChunk, class Combine>
T chunked_reduce(std::size_t n, std::size_t chunk, int jobs, T init, MapChunk&& map_chunk,
                 Combine&& combine) {
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t num_chunks = (n + chunk - 1) / chunk;
  std::vector<T> partial(num_chunks, init);
  parallel_for(num_chunks, jobs, [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    partial[c] = map_chunk(begin, std::min(n, begin + chunk));
  });
  T acc = std::move(init);
  for (auto& p : partial) acc = combine(std::move(acc), p);
  return acc;
}

}  // namespace lscrf
