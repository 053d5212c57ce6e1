#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dynembed {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Stable 64-bit FNV-1a; used to fold string identifiers into seeds.
std::uint64_t fnv1a(std::string_view text);

/// Combines a base seed with an ordered list of stream coordinates.
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t seed, Parts... parts) {
  std::uint64_t state = splitmix64(seed);
  ((state = splitmix64(state ^ static_cast<std::uint64_t>(parts))), ...);
  return state;
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

}  // namespace dynembed
