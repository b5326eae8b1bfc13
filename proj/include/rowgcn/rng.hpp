// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace rowgcn {

// Deterministic PRNG wrapper. std::mt19937_64 has a standard-mandated output
// sequence, so the same seed produces the same stream on every platform.
// Bounded draws use plain modulo: the bias is negligible for the ranges used
// here and, unlike std::uniform_int_distribution, the mapping is pinned.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  /// Uniform in [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n) { return gen_() % n; }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace rowgcn
