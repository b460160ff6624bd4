#include "ccf/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ccf {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
  const std::uint64_t span = std::uint64_t(hi - lo) + 1;
  if (span == 0) return std::int64_t(next_u64());  // full 64-bit range
  return lo + std::int64_t(next_u64() % span);
}

double Rng::normal(double mean, double stddev) {
  // Box-Muller without caching the second variate; one call consumes exactly
  // two uniforms, which keeps draw counts predictable.
  const double u1 = 1.0 - uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * M_PI * u2);
}

int Rng::poisson(double lambda) {
  if (lambda < 0) throw std::invalid_argument("poisson: negative rate");
  if (lambda == 0) return 0;
  // Knuth's method; rates here stay small.
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform01();
  } while (p > limit);
  return k - 1;
}

static std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  std::uint64_t h = base;
  h = mix(h + 0x9e3779b97f4a7c15ull + a);
  h = mix(h + 0x9e3779b97f4a7c15ull + b);
  h = mix(h + 0x9e3779b97f4a7c15ull + c);
  return h;
}

}  // namespace ccf
