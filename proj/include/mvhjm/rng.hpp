#pragma once

#include <cstdint>
#include <random>

namespace mvhjm {

/// Named substreams. Every (master seed, stream, index) triple yields an
/// independent generator, so adding paths to one component never perturbs
/// draws elsewhere.
enum class RngStream : std::uint64_t {
  AffinePath = 1,
  BsPath = 2,
  DiscretePath = 3,
  Particle = 4,
  Admissibility = 5,
  NetworkInit = 6,
  Generic = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter scheme: key = mix(mix(master ^ stream_tag) ^ index_tag).
inline std::mt19937_64 make_rng(std::uint64_t master_seed, RngStream stream,
                                std::uint64_t index = 0) {
  std::uint64_t k = splitmix64(master_seed ^ (0xA5A5A5A5A5A5A5A5ULL * static_cast<std::uint64_t>(stream)));
  k = splitmix64(k ^ (0xC2B2AE3D27D4EB4FULL * (index + 1)));
  return std::mt19937_64(k);
}

}  // namespace mvhjm
