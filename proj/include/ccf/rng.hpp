#pragma once

#include <cstdint>

namespace ccf {

// Deterministic 64-bit generator built on splitmix64. Every random draw in
// the project goes through this class so results depend only on the seed,
// not on standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  double normal(double mean = 0.0, double stddev = 1.0);

  int poisson(double lambda);

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::uint64_t state_;
};

// Stable sub-seed derivation. Gives each scene/sample/draw its own stream so
// parallel and serial schedules produce identical results.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace ccf
