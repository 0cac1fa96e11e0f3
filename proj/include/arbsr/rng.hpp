#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace arbsr {

using Rng = std::mt19937_64;

// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts)
{
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) {
    h = mix64(h ^ mix64(p));
  }
  return h;
}

// Distribution helpers with fixed, library-independent arithmetic so seeded
// streams are reproducible across standard library implementations.
inline double uniform01(Rng &rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng &rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline int uniform_int(Rng &rng, int n)
{
  // Rejection sampling removes modulo bias.
  auto const range = std::uint64_t(n);
  auto const limit = (~std::uint64_t(0) / range) * range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return int(x % range);
}

} // namespace arbsr
