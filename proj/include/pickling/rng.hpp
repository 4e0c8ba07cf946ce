#pragma once

#include <cstdint>
#include <random>

namespace pickling {

using Rng = std::mt19937_64;

// Independent random streams derived from one master seed.
enum class Stream : std::uint64_t {
  scenario = 1,
  disturbance = 2,
  init = 3,
  exploration = 4,
  dropout = 5,
  sampling = 6,
  shuffle = 7,
  noise = 8,
};

// splitmix64 finalizer; a bijective mix of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based derivation: seed(master, stream, index) = mix(mix(mix(master) ^ stream) ^ index).
constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(master) ^ static_cast<std::uint64_t>(stream)) ^ index);
}

inline Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

}  // namespace pickling
