#include "pseudoloop/rng.hpp"

namespace pseudoloop {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root,
                          std::initializer_list<std::int64_t> keys) {
  std::uint64_t state = splitmix64(root ^ (0x5044u + kRngStreamVersion));
  for (std::int64_t key : keys) {
    state = splitmix64(state ^ static_cast<std::uint64_t>(key));
  }
  return state;
}

}  // namespace pseudoloop
