#pragma once

#include <cstdint>
#include <random>

namespace mfg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for (seed, stream, substream). Streams are a pure function
/// of the key, so concurrent replications stay reproducible.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream = 0,
                                   std::uint64_t substream = 0) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ (stream * 0xd1b54a32d192ed03ULL));
  k = splitmix64(k ^ (substream * 0x8cb92ba72f3d8dd7ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(std::mt19937_64& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace mfg
