#pragma once

#include <cstdint>
#include <random>

namespace dbsde {

/// Independent random streams. Each (seed, stream, path) triple gets its own
/// engine so a path's draws do not depend on how many paths run or in what
/// order they are generated.
enum class Stream : std::uint64_t {
  Brownian = 0x1,
  DefaultClock = 0x2,
  Diagnostics = 0x3,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::mt19937_64 path_engine(std::uint64_t seed, Stream stream, std::uint64_t path) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ path);
  return std::mt19937_64(h);
}

}  // namespace dbsde
