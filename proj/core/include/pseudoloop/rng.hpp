#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pseudoloop {

// Keyed random streams. A stream is identified by a root seed plus a short
// list of integer keys (for example round and image id); the 64-bit state
// seed is derived by folding the keys through SplitMix64. The engine is
// std::mt19937_64, whose output sequence is fixed by the C++ standard.
// Distributions come from Boost.Random so sampled values do not depend on
// the standard library vendor.
//
// Stream layout version: 1. Changing the folding or the engine is a
// breaking change for every seeded artifact.
inline constexpr int kRngStreamVersion = 1;

std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t root,
                          std::initializer_list<std::int64_t> keys);

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t root,
                          std::initializer_list<std::int64_t> keys) {
  return Engine(derive_seed(root, keys));
}

}  // namespace pseudoloop
