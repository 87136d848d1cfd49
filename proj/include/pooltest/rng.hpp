#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pooltest {

/// Derive an independent stream seed from a base seed and a path of ids.
/// All parallel work units (chains, strata, replicates) get their seeds
/// this way, so results do not depend on thread scheduling.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

/// Seeded random stream with explicit, portable draw transforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal (Box-Muller).
  double normal();
  /// Gamma(shape, scale), shape > 0 (Marsaglia-Tsang).
  double gamma(double shape, double scale);
  /// Poisson with arbitrary mean (multiplicative method on <=30 chunks).
  long long poisson(double mean);
  /// Negative binomial with mean `mu` and size/dispersion `k`
  /// (variance mu + mu^2/k), drawn as a gamma-Poisson mixture.
  long long neg_binomial(double mu, double k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace pooltest
