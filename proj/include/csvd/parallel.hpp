#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace csvd {

/// Worker count resolution: explicit value if > 0, else the CSVD_WORKERS
/// environment variable, else 1.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CSVD_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Runs fn(begin, end) over a partition of [0, n). Chunks are contiguous and
/// write disjoint output, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  workers = resolve_workers(workers);
  if (workers <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t begin = n * c / chunks;
    const std::size_t end = n * (c + 1) / chunks;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace csvd
