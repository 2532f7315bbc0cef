// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace ga {

// splitmix64 finalizer; used to derive well-mixed child seeds from a root
// seed and a path of stream identifiers.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Named purpose streams hanging off the run's root seed. Every consumer of
// randomness derives its generator as child(root, {purpose, counters...}),
// so streams never alias and runs replay exactly.
enum class SeedPurpose : std::uint64_t {
  kData = 1,
  kInit = 2,
  kTrain = 3,
  kSample = 4,
  kEval = 5,
};

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(root);
  for (std::uint64_t w : path) s = mix64(s ^ mix64(w));
  return s;
}

// Deterministic RNG with pinned uniform/normal transforms. mt19937_64 output
// is fully specified by the standard, and we avoid std::*_distribution whose
// algorithms are implementation-defined, so identical seeds give identical
// streams on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static Rng child(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(root, path));
  }
  static Rng child(std::uint64_t root, SeedPurpose purpose, std::uint64_t counter = 0) {
    return Rng(derive_seed(root, {static_cast<std::uint64_t>(purpose), counter}));
  }

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Box-Muller, one draw per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace ga
