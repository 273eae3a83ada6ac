#pragma once

#include <cstdint>
#include <random>

namespace s4ecg {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent child streams from a run seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed of the `stream`-th child stream of `seed`. Pure, so workers that
// derive the same stream index get the same numbers regardless of order.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x5851F42D4C957F2DULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(stream_seed(seed, stream));
}

}  // namespace s4ecg
