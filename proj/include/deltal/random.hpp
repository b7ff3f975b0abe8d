#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace deltal {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from a base
// seed plus coordinates such as (step, prompt, attempt).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> coords = {}) {
  return Rng(derive_seed(base, coords));
}

// Uniform double in [0, 1) with 53 random bits. Written out instead of
// std::uniform_real_distribution so streams are identical across standard
// libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace deltal
