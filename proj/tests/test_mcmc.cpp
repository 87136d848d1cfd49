#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <random>

#include "pooltest/mcmc.hpp"
#include "pooltest/special.hpp"
#include "pooltest/types.hpp"

using namespace pooltest;

namespace {

TargetDensity std_normal_1d() {
  TargetDensity t;
  t.dim = 1;
  t.log_density = [](const std::vector<double>& x) { return -0.5 * x[0] * x[0]; };
  t.parameter_names = {"x"};
  return t;
}

}  // namespace

TEST_CASE("standard normal target moments") {
  McmcConfig cfg;
  cfg.chains = 4;
  cfg.warmup_iters = 1000;
  cfg.sampling_iters = 4000;
  cfg.seed = 3;
  const PosteriorDraws draws = sample(std_normal_1d(), {0.0}, cfg);
  const double ess = draws.bulk_ess[0];
  CHECK(ess > 100.0);
  CHECK(std::fabs(draws.mean(0)) < 4.0 / std::sqrt(ess));
  CHECK(draws.sd(0) == doctest::Approx(1.0).epsilon(0.10));
  CHECK(draws.split_rhat[0] < 1.05);
}

TEST_CASE("Beta(1.5, 0.5) on the logit scale recovers its mean") {
  TargetDensity t;
  t.dim = 1;
  t.log_density = [](const std::vector<double>& x) {
    const double eta = x[0];
    const double p = 1.0 / (1.0 + std::exp(-eta));
    // Beta(1.5, 0.5) density in p plus the logistic Jacobian p(1-p).
    return 0.5 * std::log(p) - 0.5 * std::log1p(-p) + std::log(p) + std::log1p(-p);
  };
  McmcConfig cfg;
  cfg.chains = 4;
  cfg.warmup_iters = 1500;
  cfg.sampling_iters = 8000;
  cfg.seed = 9;
  const PosteriorDraws draws = sample(t, {0.0}, cfg);
  std::vector<double> p_draws;
  for (int c = 0; c < draws.num_chains; ++c)
    for (int i = 0; i < draws.iters_per_chain; ++i)
      p_draws.push_back(1.0 / (1.0 + std::exp(-draws.value(c, i, 0))));
  const double mean = std::accumulate(p_draws.begin(), p_draws.end(), 0.0) / p_draws.size();
  double var = 0.0;
  for (double p : p_draws) var += (p - mean) * (p - mean);
  var /= p_draws.size();
  const double mcse = std::sqrt(var / draws.bulk_ess[0]);
  CHECK(std::fabs(mean - 0.75) < 3.0 * mcse + 1e-3);
}

TEST_CASE("covariance adaptation captures correlation") {
  TargetDensity t;
  t.dim = 2;
  const double rho = 0.9;
  t.log_density = [rho](const std::vector<double>& x) {
    const double q = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (1.0 - rho * rho);
    return -0.5 * q;
  };
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.warmup_iters = 4000;
  cfg.sampling_iters = 1000;
  cfg.seed = 4;
  const PosteriorDraws draws = sample(t, {0.0, 0.0}, cfg);
  for (const auto& cov : draws.adapted_covariance) {
    REQUIRE(cov.size() == 4);
    const double corr = cov[1] / std::sqrt(cov[0] * cov[3]);
    CHECK(corr > 0.5);
  }
}

TEST_CASE("determinism across thread counts") {
  McmcConfig cfg;
  cfg.chains = 4;
  cfg.warmup_iters = 300;
  cfg.sampling_iters = 400;
  cfg.seed = 77;
  setenv("POOLTEST_THREADS", "1", 1);
  const PosteriorDraws serial = sample(std_normal_1d(), {0.2}, cfg);
  setenv("POOLTEST_THREADS", "4", 1);
  const PosteriorDraws threaded = sample(std_normal_1d(), {0.2}, cfg);
  unsetenv("POOLTEST_THREADS");
  REQUIRE(serial.draws.size() == threaded.draws.size());
  CHECK(std::equal(serial.draws.begin(), serial.draws.end(), threaded.draws.begin()));

  const PosteriorDraws again = sample(std_normal_1d(), {0.2}, cfg);
  CHECK(std::equal(serial.draws.begin(), serial.draws.end(), again.draws.begin()));
}

TEST_CASE("sample validates its inputs") {
  McmcConfig cfg;
  cfg.chains = 1;
  CHECK_THROWS_AS(sample(std_normal_1d(), {0.0}, cfg), std::invalid_argument);
  cfg.chains = 2;
  cfg.warmup_iters = 10;
  CHECK_THROWS_AS(sample(std_normal_1d(), {0.0}, cfg), std::invalid_argument);
  cfg.warmup_iters = 200;
  cfg.sampling_iters = 200;
  TargetDensity bad = std_normal_1d();
  bad.log_density = [](const std::vector<double>&) {
    return -std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(sample(bad, {0.0}, cfg), NumericError);
}

TEST_CASE("split R-hat") {
  SUBCASE("identical constant chains report 1.0 with the degenerate flag") {
    const std::vector<std::vector<double>> chains(3, std::vector<double>(64, 2.5));
    bool degenerate = false;
    CHECK(split_rhat(chains, &degenerate) == 1.0);
    CHECK(degenerate);
  }

  SUBCASE("well separated chains blow up") {
    std::vector<std::vector<double>> chains(2, std::vector<double>(1000));
    std::mt19937_64 rng(1);
    auto unif = [&rng] { return (rng() >> 11) * 0x1p-53; };
    for (std::size_t i = 0; i < 1000; ++i) {
      chains[0][i] = std::sqrt(-2.0 * std::log(unif())) * std::cos(6.2831853 * unif());
      chains[1][i] = 5.0 + std::sqrt(-2.0 * std::log(unif())) * std::cos(6.2831853 * unif());
    }
    CHECK(split_rhat(chains) > 2.0);
  }

  SUBCASE("iid chains over fixed seeds stay near 1 and keep high ESS") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      std::mt19937_64 rng(seed);
      auto unif = [&rng] { return (rng() >> 11) * 0x1p-53; };
      std::vector<std::vector<double>> chains(4, std::vector<double>(1000));
      for (auto& chain : chains)
        for (double& x : chain)
          x = std::sqrt(-2.0 * std::log(unif())) * std::cos(6.2831853 * unif());
      CHECK(split_rhat(chains) < 1.01);
      CHECK(bulk_ess(chains) > 1000.0);
    }
  }

  SUBCASE("diagnostics are permutation invariant") {
    std::mt19937_64 rng(33);
    auto unif = [&rng] { return (rng() >> 11) * 0x1p-53; };
    std::vector<std::vector<double>> chains(4, std::vector<double>(256));
    for (auto& chain : chains)
      for (double& x : chain) x = unif();
    const double r0 = split_rhat(chains);
    const double e0 = bulk_ess(chains);
    std::rotate(chains.begin(), chains.begin() + 2, chains.end());
    CHECK(split_rhat(chains) == doctest::Approx(r0).epsilon(1e-14));
    CHECK(bulk_ess(chains) == doctest::Approx(e0).epsilon(1e-14));
  }

  SUBCASE("insufficient draws are rejected") {
    CHECK_THROWS_AS(split_rhat({{1.0, 2.0}, {1.0, 2.0}}), std::invalid_argument);
    CHECK_THROWS_AS(bulk_ess({{1.0, 2.0, 3.0}}), std::invalid_argument);
  }
}

TEST_CASE("post-warmup kernel leaves the target invariant" * doctest::timeout(300)) {
  // Thinned draws from a long run binned against the normal CDF.
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.warmup_iters = 2000;
  cfg.sampling_iters = 200000;
  cfg.thin = 40;
  cfg.seed = 123;
  const PosteriorDraws draws = sample(std_normal_1d(), {0.0}, cfg);
  const auto xs = draws.parameter_draws(0);

  const int bins = 20;
  std::vector<double> edges(bins - 1);
  for (int b = 1; b < bins; ++b) edges[b - 1] = normal_quantile(static_cast<double>(b) / bins);
  std::vector<int> counts(bins, 0);
  for (double x : xs) {
    const int b =
        static_cast<int>(std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
    counts[b] += 1;
  }
  const double expected = static_cast<double>(xs.size()) / bins;
  double stat = 0.0;
  for (int b = 0; b < bins; ++b) stat += (counts[b] - expected) * (counts[b] - expected) / expected;
  CHECK(stat < chi_square_quantile(0.999, bins - 1));
}
