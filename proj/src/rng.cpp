#include "pooltest/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace pooltest {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(base ^ 0xa5a5a5a5a5a5a5a5ULL);
  for (std::uint64_t id : path) s = splitmix64(s ^ splitmix64(id));
  return s;
}

Rng::Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  // 53-bit mantissa, shifted into (0,1).
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1p-53;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gamma(double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0)) throw std::domain_error("Rng::gamma: shape, scale > 0 required");
  if (shape < 1.0) {
    const double u = uniform();
    return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

long long Rng::poisson(double mean) {
  if (!(mean >= 0.0)) throw std::domain_error("Rng::poisson: mean >= 0 required");
  long long total = 0;
  // Split large means so exp(-chunk) stays far from underflow.
  while (mean > 30.0) {
    const double chunk = 30.0;
    const double limit = std::exp(-chunk);
    long long k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    total += k;
    mean -= chunk;
  }
  if (mean > 0.0) {
    const double limit = std::exp(-mean);
    long long k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    total += k;
  }
  return total;
}

long long Rng::neg_binomial(double mu, double k) {
  if (!(mu >= 0.0) || !(k > 0.0)) throw std::domain_error("Rng::neg_binomial: mu >= 0, k > 0 required");
  if (mu == 0.0) return 0;
  const double lambda = gamma(k, mu / k);
  return poisson(lambda);
}

}  // namespace pooltest
