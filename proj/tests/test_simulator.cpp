#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "pooltest/model_core.hpp"
#include "pooltest/rng.hpp"
#include "pooltest/simulator.hpp"

using namespace pooltest;

TEST_CASE("partition_catch") {
  CHECK(partition_catch(53, 25) == std::vector<int>{25, 25, 3});
  CHECK(partition_catch(0, 25).empty());
  CHECK(partition_catch(25, 25) == std::vector<int>{25});
  CHECK_THROWS_AS(partition_catch(-1, 25), std::invalid_argument);

  SUBCASE("parts sum to the catch, sizes stay in range, one remainder at most") {
    for (long long c : {1LL, 7LL, 24LL, 26LL, 50LL, 51LL, 199LL, 200LL, 1234LL}) {
      const auto parts = partition_catch(c, 25);
      long long total = 0;
      int small = 0;
      for (int p : parts) {
        total += p;
        CHECK(p >= 1);
        CHECK(p <= 25);
        if (p < 25) ++small;
      }
      CHECK(total == c);
      CHECK(small <= 1);
    }
  }
}

TEST_CASE("negative binomial sampler moments") {
  Rng rng(99);
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(rng.neg_binomial(200.0, 5.0));
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::fabs(mean - 200.0) < 0.02 * 200.0);
  CHECK(std::fabs(var - 8200.0) < 0.05 * 8200.0);
}

TEST_CASE("simulate determinism and structure") {
  SimConfig cfg;
  cfg.villages_per_region = 2;
  cfg.sites_per_village = 3;
  cfg.catch_mean = 50.0;
  cfg.seed = 7;

  const SimResult a = simulate(cfg);
  const SimResult b = simulate(cfg);
  REQUIRE(a.data.num_pools() == b.data.num_pools());
  for (std::size_t i = 0; i < a.data.num_pools(); ++i) {
    CHECK(a.data.pools()[i].size == b.data.pools()[i].size);
    CHECK(a.data.pools()[i].positive == b.data.pools()[i].positive);
  }

  SUBCASE("columns and hierarchy are declared") {
    CHECK(a.data.covariate_columns() ==
          std::vector<std::string>{"Region", "Village", "Site", "Year"});
    CHECK(a.data.hierarchy_columns() == std::vector<std::string>{"Village", "Site"});
    CHECK(a.data.pools()[0].hierarchy_path.size() == 2);
  }

  SUBCASE("ground truth marginals are site means") {
    for (const auto& [key, value] : a.truth.region_year) {
      double sum = 0.0;
      int count = 0;
      for (const auto& sy : a.truth.site_years) {
        if (sy.region == key.first && sy.year == key.second) {
          sum += sy.prevalence;
          ++count;
        }
      }
      CHECK(count == cfg.villages_per_region * cfg.sites_per_village);
      CHECK(value == doctest::Approx(sum / count).epsilon(1e-12));
    }
    // site prevalence reproduces the linear predictor definition
    for (const auto& sy : a.truth.site_years) {
      const std::size_t r = static_cast<std::size_t>(sy.region[0] - 'A');
      const double eta = link_apply(Link::logit, cfg.region_prevalences[r]) +
                         a.truth.village_intercepts.at(sy.village) +
                         a.truth.site_intercepts.at(sy.site) +
                         (std::log(cfg.year_odds_ratio) + a.truth.village_slopes.at(sy.village)) *
                             sy.year;
      CHECK(sy.prevalence == doctest::Approx(link_inverse(Link::logit, eta)).epsilon(1e-12));
    }
  }
}

TEST_CASE("degenerate config freezes prevalence across sites and years") {
  SimConfig cfg;
  cfg.sd_village_intercept = 0.0;
  cfg.sd_site_intercept = 0.0;
  cfg.sd_village_slope = 0.0;
  cfg.year_odds_ratio = 1.0;
  cfg.villages_per_region = 2;
  cfg.sites_per_village = 2;
  cfg.catch_mean = 30.0;
  cfg.seed = 13;
  const SimResult sim = simulate(cfg);
  for (const auto& sy : sim.truth.site_years) {
    const std::size_t r = static_cast<std::size_t>(sy.region[0] - 'A');
    CHECK(sy.prevalence == doctest::Approx(cfg.region_prevalences[r]).epsilon(1e-12));
  }
}

TEST_CASE("positive-pool fraction matches the ground truth expectation") {
  SimConfig cfg;
  cfg.seed = 2;
  const SimResult sim = simulate(cfg);
  // Region C, year 0, full pools only: observed positives vs the analytic
  // expectation under the realized site prevalences, within 3 SD.
  double expected = 0.0, variance = 0.0;
  long long observed = 0, n_pools = 0;
  std::map<std::string, double> site_prev;
  for (const auto& sy : sim.truth.site_years)
    if (sy.region == "C" && sy.year == 0.0) site_prev[sy.site] = sy.prevalence;
  for (const Pool& pool : sim.data.pools()) {
    if (format_value(sim.data.value(pool, "Region")) != "C") continue;
    if (value_as_number(sim.data.value(pool, "Year")) != 0.0) continue;
    if (pool.size != 25) continue;
    const double phi = pool_positive_prob(site_prev.at(format_value(sim.data.value(pool, "Site"))), 25);
    expected += phi;
    variance += phi * (1.0 - phi);
    n_pools += 1;
    if (pool.positive) observed += 1;
  }
  REQUIRE(n_pools > 500);
  CHECK(std::fabs(static_cast<double>(observed) - expected) < 3.0 * std::sqrt(variance));
}
