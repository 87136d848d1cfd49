#include <doctest.h>

#include <cmath>
#include <random>

#include "pooltest/model_core.hpp"
#include "pooltest/prevalence_freq.hpp"
#include "pooltest/special.hpp"
#include "test_helpers.hpp"

using namespace pooltest;
using pooltest::testing::equal_pools;
using pooltest::testing::make_pools;

TEST_CASE("prevalence MLE") {
  CHECK(prevalence_mle(equal_pools(20, 0, 25)) == 0.0);
  CHECK(prevalence_mle(equal_pools(20, 20, 25)) == 1.0);
  CHECK_THROWS_AS(prevalence_mle(PoolDataset{}), DataError);

  SUBCASE("equal pools have the closed form 1 - (1 - y/n)^(1/s)") {
    CHECK(prevalence_mle(equal_pools(10, 3, 25)) ==
          doctest::Approx(0.014165706424945608).epsilon(1e-12));
    for (int s : {1, 5, 25}) {
      for (int n : {4, 11, 37}) {
        for (int y = 1; y < n; y += 3) {
          const double closed = 1.0 - std::pow(1.0 - static_cast<double>(y) / n, 1.0 / s);
          CHECK(prevalence_mle(equal_pools(n, y, s)) == doctest::Approx(closed).epsilon(1e-10));
        }
      }
    }
  }

  SUBCASE("mixed sizes against a fine grid search") {
    const auto data = make_pools({{25, true}, {25, false}, {10, false}, {5, true}});
    double best_p = 0.0, best_ll = -1e300;
    const int grid = 1000000;
    for (int k = 1; k < grid; ++k) {
      const double p = static_cast<double>(k) / grid;
      const double ll = pooled_log_likelihood(data, p);
      if (ll > best_ll) {  // ties break toward smaller p
        best_ll = ll;
        best_p = p;
      }
    }
    CHECK(std::fabs(prevalence_mle(data) - best_p) < 2e-6);
  }

  SUBCASE("two equal-size groups tuned to a common optimum keep the score at zero") {
    // With 1-p = 0.9: phi_2 = 0.19 and phi_3 = 0.271 exactly, so mixing
    // 19/100 positive pools of size 2 with 271/1000 of size 3 has its MLE
    // at p = 0.1.
    std::vector<std::pair<int, bool>> spec;
    for (int i = 0; i < 100; ++i) spec.emplace_back(2, i < 19);
    for (int i = 0; i < 1000; ++i) spec.emplace_back(3, i < 271);
    const auto data = make_pools(spec);
    CHECK(std::fabs(score_and_curvature(data, 0.1).first) < 1e-8);
    CHECK(prevalence_mle(data) == doctest::Approx(0.1).epsilon(1e-9));
  }
}

TEST_CASE("Wilks interval") {
  const double q95 = chi_square_quantile(0.95, 1.0);

  SUBCASE("all-negative boundary closed form") {
    const auto data = equal_pools(20, 0, 25);  // N = 500
    const auto [low, high] = wilks_interval(data, 0.95);
    CHECK(low == 0.0);
    CHECK(high == -std::expm1(-q95 / 1000.0));
    CHECK(high == doctest::Approx(0.003834089856635756).epsilon(1e-10));
  }

  SUBCASE("single positive pool of size 1") {
    const auto data = make_pools({{1, true}});
    const auto [low, high] = wilks_interval(data, 0.95);
    CHECK(high == 1.0);
    CHECK(low == doctest::Approx(std::exp(-q95 / 2.0)).epsilon(1e-8));
    CHECK(low == doctest::Approx(0.14650006448608417).epsilon(1e-7));
  }

  SUBCASE("endpoints satisfy the likelihood-ratio equation") {
    const auto data = equal_pools(10, 3, 25);
    const double mle = prevalence_mle(data);
    const double llmax = pooled_log_likelihood(data, mle);
    const auto [low, high] = wilks_interval(data, 0.95);
    CHECK(low < mle);
    CHECK(high > mle);
    CHECK(2.0 * (llmax - pooled_log_likelihood(data, low)) == doctest::Approx(q95).epsilon(1e-8));
    CHECK(2.0 * (llmax - pooled_log_likelihood(data, high)) == doctest::Approx(q95).epsilon(1e-8));
  }

  SUBCASE("levels nest") {
    const auto data = make_pools({{25, true}, {25, false}, {10, false}, {5, true}, {12, false}});
    const double mle = prevalence_mle(data);
    for (double level : {0.5, 0.9, 0.95, 0.99}) {
      const auto [low, high] = wilks_interval(data, level);
      CHECK(low <= mle);
      CHECK(high >= mle);
    }
    const auto [l50, h50] = wilks_interval(data, 0.5);
    const auto [l90, h90] = wilks_interval(data, 0.9);
    const auto [l95, h95] = wilks_interval(data, 0.95);
    const auto [l99, h99] = wilks_interval(data, 0.99);
    CHECK(l99 < l95);
    CHECK(l95 < l90);
    CHECK(l90 < l50);
    CHECK(h50 < h90);
    CHECK(h90 < h95);
    CHECK(h95 < h99);
  }

  SUBCASE("random datasets satisfy the equation away from the boundary") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<std::pair<int, bool>> spec;
      const int n = 3 + static_cast<int>(rng() % 10);
      bool any_pos = false, any_neg = false;
      for (int i = 0; i < n; ++i) {
        const bool pos = (rng() % 3) == 0;
        any_pos |= pos;
        any_neg |= !pos;
        spec.emplace_back(1 + static_cast<int>(rng() % 25), pos);
      }
      if (!any_pos || !any_neg) continue;
      const auto data = make_pools(spec);
      const double llmax = pooled_log_likelihood(data, prevalence_mle(data));
      const auto [low, high] = wilks_interval(data, 0.95);
      CHECK(2.0 * (llmax - pooled_log_likelihood(data, low)) == doctest::Approx(q95).epsilon(1e-8));
      CHECK(2.0 * (llmax - pooled_log_likelihood(data, high)) == doctest::Approx(q95).epsilon(1e-8));
    }
  }
}

TEST_CASE("stratified estimation") {
  auto make_labelled = [](const std::string& region, double year, int size, bool pos) {
    Pool p;
    p.size = size;
    p.positive = pos;
    p.covariates = {{"Region", region}, {"Year", year}};
    return p;
  };
  std::vector<Pool> pools;
  for (int i = 0; i < 8; ++i) pools.push_back(make_labelled("B", 0, 10, i < 2));
  for (int i = 0; i < 6; ++i) pools.push_back(make_labelled("A", 0, 10, i < 1));
  for (int i = 0; i < 5; ++i) pools.push_back(make_labelled("A", 1, 10, i < 3));
  const PoolDataset data(pools, {"Region", "Year"});

  SUBCASE("empty stratification equals the pooled estimate") {
    const auto all = estimate_stratified(data, {});
    REQUIRE(all.size() == 1);
    CHECK(all[0].point == doctest::Approx(prevalence_mle(data)).epsilon(1e-12));
    CHECK(all[0].stratum.empty());
  }

  SUBCASE("cells are ordered and match per-subset estimates") {
    const auto cells = estimate_stratified(data, {"Region", "Year"});
    REQUIRE(cells.size() == 3);
    CHECK(format_value(cells[0].stratum[0].second) == "A");
    CHECK(value_as_number(cells[0].stratum[1].second) == 0.0);
    CHECK(format_value(cells[1].stratum[0].second) == "A");
    CHECK(value_as_number(cells[1].stratum[1].second) == 1.0);
    CHECK(format_value(cells[2].stratum[0].second) == "B");

    const auto a0 = equal_pools(6, 1, 10);
    CHECK(cells[0].point == doctest::Approx(prevalence_mle(a0)).epsilon(1e-12));
    const auto a0_iv = wilks_interval(a0, 0.95);
    CHECK(cells[0].interval_low == doctest::Approx(a0_iv.first).epsilon(1e-12));
    CHECK(cells[0].interval_high == doctest::Approx(a0_iv.second).epsilon(1e-12));
    CHECK(cells[0].num_pools == 6);
    CHECK(cells[0].num_individuals == 60);
  }

  SUBCASE("unknown columns are named") {
    CHECK_THROWS_WITH_AS(estimate_stratified(data, {"Village"}), doctest::Contains("Village"),
                         DataError);
  }
}
