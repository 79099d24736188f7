#pragma once

// Small deterministic sampling helpers built on std::mt19937_64.
//
// The standard <random> distributions are implementation-defined, so the same
// seed can give different streams across standard libraries.  Everything that
// feeds reproducible results (parameter init, start-state jitter, action
// noise) goes through these fixed formulas instead.

#include <cmath>
#include <cstdint>
#include <random>

namespace voxctl::rnd {

// uniform double in [0, 1) with 53 random bits
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// uniform double in [lo, hi)
inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// standard normal via Box-Muller; consumes exactly two draws per call so the
// stream position is a pure function of the call count
inline double normal01(std::mt19937_64& rng) {
  // first uniform shifted into (0, 1] so the log argument is never zero
  double u1 = static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53;
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// distinct deterministic substream for (seed, a, b), splitmix-style mixing
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace voxctl::rnd
