#pragma once

#include <cstdint>
#include <random>

namespace fedseg {

// splitmix64 step; used for seed derivation so that any single run can be
// reproduced from (master seed, indices) without replaying the whole schedule.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a) {
  return splitmix64(master ^ splitmix64(a));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b) {
  return splitmix64(derive_seed(master, a) ^ splitmix64(b + 0x51ed2701ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace fedseg
