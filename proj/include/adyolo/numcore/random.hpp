#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace adyolo {

using Rng = std::mt19937_64;

// splitmix64 finalizer; stable across platforms.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for a named sub-stream, e.g. derive_seed(run_seed, {step, sample}).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Uniform in [lo, hi) from 53 random bits; collapses to lo when lo == hi.
inline double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

// Counter-based uniform in [-1, 1); order independent.
inline double hashed_signed_unit(std::uint64_t seed, std::uint64_t counter) {
  const std::uint64_t h = mix64(seed ^ mix64(counter));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace adyolo
