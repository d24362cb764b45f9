#pragma once

#include <cstdint>
#include <random>

namespace csvd {

/// splitmix64 finalizer; used to derive well-mixed per-iteration seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for resampling iteration `iter` of a run seeded with `seed`.
/// Fixing the derivation makes every iteration self-contained, so results
/// are identical regardless of how iterations are scheduled.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t iter) {
  return splitmix64(seed ^ splitmix64(iter));
}

/// The toolkit's PRNG is std::mt19937_64, whose output sequence is fixed by
/// the C++ standard, so seeded results reproduce bit-exactly everywhere.
using Rng = std::mt19937_64;

/// Uniform draw from [0, n) via the fixed-point multiply reduction.
/// std::uniform_int_distribution is implementation-defined; this is not.
inline std::uint64_t bounded(Rng& rng, std::uint64_t n) {
  const unsigned __int128 wide = static_cast<unsigned __int128>(rng()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

}  // namespace csvd
