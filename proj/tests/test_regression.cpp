#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "pooltest/model_core.hpp"
#include "pooltest/prevalence_bayes.hpp"
#include "pooltest/prevalence_freq.hpp"
#include "pooltest/regression.hpp"
#include "pooltest/rng.hpp"
#include "pooltest/simulator.hpp"
#include "test_helpers.hpp"

using namespace pooltest;

namespace {

// Two-covariate synthetic pooled design for cross-checks.
PoolDataset simulated_design(std::uint64_t seed, int n_pools, Link link, double b0, double b1,
                             double b2) {
  Rng rng(seed);
  std::vector<Pool> pools;
  for (int i = 0; i < n_pools; ++i) {
    const std::string g = (i % 3 == 0) ? "a" : (i % 3 == 1 ? "b" : "c");
    const double x = static_cast<double>(i % 5);
    const double eta = b0 + b1 * (g == "b" ? 1.0 : 0.0) + b1 * 0.6 * (g == "c" ? 1.0 : 0.0) + b2 * x;
    const int size = 1 + static_cast<int>(rng.uniform() * 30);
    const double phi = pool_positive_prob(link_inverse(link, eta), size);
    Pool p;
    p.size = size;
    p.positive = rng.uniform() < phi;
    p.covariates = {{"G", g}, {"X", x}};
    pools.push_back(std::move(p));
  }
  return PoolDataset(std::move(pools), {"G", "X"});
}

ModelFormula formula_with_link(const std::string& text, Link link) {
  ModelFormula f = parse_formula(text);
  f.link = link;
  return f;
}

}  // namespace

TEST_CASE("intercept-only GLM matches the scalar MLE through the link") {
  const auto data = testing::make_pools({{25, true}, {25, false}, {10, false}, {5, true}, {18, false}});
  PoolDataset named(data.pools(), {});
  const double mle = prevalence_mle(named);
  for (Link link : {Link::logit, Link::cloglog}) {
    const FittedModel fit = fit_glm(formula_with_link("Result ~ 1", link), named);
    CHECK(link_inverse(link, fit.beta[0]) == doctest::Approx(mle).epsilon(1e-8));
  }
}

TEST_CASE("cloglog pooled GLM equals the offset Bernoulli GLM") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const PoolDataset data = simulated_design(seed, 160, Link::cloglog, -4.0, 0.8, -0.15);
    const ModelFormula f = formula_with_link("Result ~ G + X", Link::cloglog);
    const FittedModel pooled = fit_glm(f, data);
    const FittedModel offset = fit_glm_offset_bernoulli(f, data);
    REQUIRE(pooled.beta.size() == offset.beta.size());
    for (Eigen::Index j = 0; j < pooled.beta.size(); ++j)
      CHECK(pooled.beta[j] == doctest::Approx(offset.beta[j]).epsilon(1e-6));
  }
}

TEST_CASE("regression gradient and Hessian match finite differences") {
  const PoolDataset data = simulated_design(5, 80, Link::logit, -3.0, 1.0, -0.2);
  for (Link link : {Link::logit, Link::cloglog}) {
    const ModelDesign design = ModelDesign::build(formula_with_link("Result ~ G + X", link), data);
    std::mt19937_64 rng(17);
    auto unif = [&rng] { return (rng() >> 11) * 0x1p-53; };
    const int p = design.fixed.dim();
    for (int rep = 0; rep < 25; ++rep) {
      Eigen::VectorXd beta(p);
      for (int j = 0; j < p; ++j) beta[j] = -2.0 + 3.0 * unif();
      beta[0] -= 2.0;
      auto loglik = [&](const Eigen::VectorXd& b) {
        double ll = 0.0;
        const Eigen::VectorXd eta = design.X * b;
        for (std::size_t i = 0; i < design.num_pools(); ++i)
          ll += pool_eta_loglik(link, design.positive[i] != 0, design.sizes[i], eta[i]);
        return ll;
      };
      const double h = 1e-6;
      Eigen::VectorXd grad_fd(p);
      for (int j = 0; j < p; ++j) {
        Eigen::VectorXd bp = beta, bm = beta;
        bp[j] += h;
        bm[j] -= h;
        grad_fd[j] = (loglik(bp) - loglik(bm)) / (2.0 * h);
      }
      Eigen::VectorXd eta = design.X * beta;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
      Eigen::MatrixXd neg_hess = Eigen::MatrixXd::Zero(p, p);
      for (std::size_t i = 0; i < design.num_pools(); ++i) {
        const EtaDerivatives d =
            pool_eta_derivatives(link, design.positive[i] != 0, design.sizes[i], eta[i]);
        grad += d.d1 * design.X.row(i).transpose();
        neg_hess += -d.d2 * design.X.row(i).transpose() * design.X.row(i);
      }
      for (int j = 0; j < p; ++j)
        CHECK(grad[j] == doctest::Approx(grad_fd[j]).epsilon(1e-5));
      const double h2 = 1e-4;
      for (int j = 0; j < p; ++j) {
        Eigen::VectorXd bp = beta, bm = beta;
        bp[j] += h2;
        bm[j] -= h2;
        const double fd2 = (loglik(bp) - 2.0 * loglik(beta) + loglik(bm)) / (h2 * h2);
        CHECK(-neg_hess(j, j) == doctest::Approx(fd2).epsilon(5e-3));
      }
    }
  }
}

TEST_CASE("rank-deficient designs name the collinear column") {
  std::vector<Pool> pools;
  for (int i = 0; i < 30; ++i) {
    Pool p;
    p.size = 10;
    p.positive = i % 4 == 0;
    p.covariates = {{"C", 3.0}};  // constant covariate collides with the intercept
    pools.push_back(std::move(p));
  }
  const PoolDataset data(pools, {"C"});
  CHECK_THROWS_WITH_AS(fit_glm(parse_formula("Result ~ C"), data),
                       doctest::Contains("collinear"), NumericError);
}

TEST_CASE("treatment recoding leaves fitted prevalences invariant") {
  const PoolDataset data = simulated_design(8, 150, Link::logit, -3.5, 1.2, -0.1);
  const FittedModel base = fit_glm(parse_formula("Result ~ G + X"), data);

  // Relabel so the reference level changes (a -> z sorts last).
  std::vector<Pool> relabelled = data.pools();
  for (Pool& p : relabelled) {
    if (std::get<std::string>(p.covariates.at("G")) == "a") p.covariates["G"] = std::string("z");
  }
  const PoolDataset data2(relabelled, {"G", "X"});
  const FittedModel recoded = fit_glm(parse_formula("Result ~ G + X"), data2);

  CHECK(std::fabs(base.beta[1] - recoded.beta[1]) > 1e-6);  // coefficients move
  const auto tables = get_prevalence(base);
  const auto tables2 = get_prevalence(recoded);
  REQUIRE(tables.size() == 1);
  REQUIRE(tables[0].rows.size() == tables2[0].rows.size());
  // Match rows by covariate values modulo the relabelling.
  for (const auto& row : tables[0].rows) {
    const std::string g = format_value(row.values[0]);
    const std::string g2 = g == "a" ? "z" : g;
    bool found = false;
    for (const auto& row2 : tables2[0].rows) {
      if (format_value(row2.values[0]) == g2 &&
          value_as_number(row2.values[1]) == value_as_number(row.values[1])) {
        CHECK(row.estimate == doctest::Approx(row2.estimate).epsilon(1e-8));
        CHECK(row.low == doctest::Approx(row2.low).epsilon(1e-7));
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("Laplace marginal likelihood collapses to the GLM at sigma -> 0" * doctest::timeout(120)) {
  // Data with no real group variation: the SD estimate collapses to the
  // boundary and the marginal likelihood approaches the plain GLM's.
  SimConfig flat_cfg;
  flat_cfg.villages_per_region = 3;
  flat_cfg.sites_per_village = 3;
  flat_cfg.catch_mean = 60.0;
  flat_cfg.sd_village_intercept = 0.0;
  flat_cfg.sd_site_intercept = 0.0;
  flat_cfg.sd_village_slope = 0.0;
  flat_cfg.seed = 9;
  const SimResult flat = simulate(flat_cfg);
  const FittedModel glm_flat = fit_glm(parse_formula("Result ~ Region + Year"), flat.data);
  const FittedModel lap = fit_glmm_laplace(parse_formula("Result ~ Region + Year + (1|Village)"),
                                           flat.data);
  CHECK(lap.random_effects[0].sd[0] < 0.05);
  CHECK(lap.meta.log_likelihood == doctest::Approx(glm_flat.meta.log_likelihood).epsilon(1e-4));
  for (Eigen::Index j = 0; j < glm_flat.beta.size(); ++j) {
    const double se = std::sqrt(glm_flat.beta_cov(j, j));
    CHECK(std::fabs(lap.beta[j] - glm_flat.beta[j]) < 2.0 * se);
  }
}

TEST_CASE("Laplace fit recovers per-group offsets with two large groups" * doctest::timeout(120)) {
  Rng rng(31);
  std::vector<Pool> pools;
  const double offsets[2] = {0.5, -0.5};
  for (int g = 0; g < 2; ++g) {
    for (int i = 0; i < 400; ++i) {
      const double eta = -3.0 + offsets[g];
      Pool p;
      p.size = 20;
      p.positive = rng.uniform() < pool_positive_prob(link_inverse(Link::logit, eta), 20);
      p.covariates = {{"G", std::string(1, static_cast<char>('a' + g))}};
      pools.push_back(std::move(p));
    }
  }
  const PoolDataset data(pools, {"G"});
  const FittedModel fit = fit_glmm_laplace(parse_formula("Result ~ 1 + (1|G)"), data);
  REQUIRE(fit.u_modes.size() == 2);
  // Conditional modes should recover the true offsets within 2 conditional SDs.
  for (int g = 0; g < 2; ++g) {
    const double sd = std::sqrt(fit.u_cov(g, g));
    CHECK(std::fabs(fit.u_modes[g] - offsets[g]) < 2.0 * sd + 0.2);
  }
}

TEST_CASE("Bayesian fixed-effects fit tracks the GLM on a large design" * doctest::timeout(300)) {
  const PoolDataset data = simulated_design(3, 600, Link::logit, -3.2, 1.0, -0.15);
  const ModelFormula f = parse_formula("Result ~ G + X");
  const FittedModel glm = fit_glm(f, data);
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.warmup_iters = 1200;
  cfg.sampling_iters = 6000;
  cfg.seed = 14;
  const FittedModel bayes = fit_bayes(f, data, RegressionPriors{}, cfg);
  for (Eigen::Index j = 0; j < glm.beta.size(); ++j) {
    const double se = std::sqrt(glm.beta_cov(j, j));
    CHECK(std::fabs(bayes.draws.mean(static_cast<int>(j)) - glm.beta[j]) < 0.5 * se);
  }
}

TEST_CASE("intercept-only Bayesian regression matches the quadrature posterior" * doctest::timeout(300)) {
  const auto data = testing::equal_pools(40, 6, 12);
  // Match the priors: posterior_1d uses Beta(a, b) on p; the regression
  // prior is normal on the intercept, so compare with a nearly flat prior
  // on both sides at matched scales.
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.warmup_iters = 1000;
  cfg.sampling_iters = 8000;
  cfg.seed = 21;
  RegressionPriors priors;
  priors.intercept_sd = 100.0;  // effectively flat on the logit scale
  const FittedModel bayes = fit_bayes(parse_formula("Result ~ 1"), data, priors, cfg);
  std::vector<double> p_draws;
  for (int c = 0; c < bayes.draws.num_chains; ++c)
    for (int i = 0; i < bayes.draws.iters_per_chain; ++i)
      p_draws.push_back(link_inverse(Link::logit, bayes.draws.value(c, i, 0)));
  const double mean = std::accumulate(p_draws.begin(), p_draws.end(), 0.0) / p_draws.size();
  double var = 0.0;
  for (double p : p_draws) var += (p - mean) * (p - mean);
  var /= p_draws.size();
  const double mcse = std::sqrt(var / std::max(bayes.draws.bulk_ess[0], 1.0));

  // Flat prior on logit(p) corresponds to Beta(0,0); Beta(0.01, 0.01) is
  // numerically close while staying proper.
  const PrevalenceEstimate quad = posterior_1d(data, BetaPrior{0.01, 0.01}, 0.95);
  CHECK(std::fabs(mean - quad.point) < 3.0 * mcse + 2e-3);
}

TEST_CASE("get_prevalence table structure on a small hierarchical fit" * doctest::timeout(600)) {
  SimConfig cfg;
  cfg.villages_per_region = 3;
  cfg.sites_per_village = 2;
  cfg.catch_mean = 80.0;
  cfg.seed = 6;
  const SimResult sim = simulate(cfg);

  const FittedModel lap = fit_glmm_laplace(parse_formula("Result ~ Region + Year + (1|Village/Site)"),
                                           sim.data);
  const auto tables = get_prevalence(lap);
  REQUIRE(tables.size() == 3);
  CHECK(tables[0].name == "PopulationEffects");
  CHECK(tables[1].name == "Village");
  CHECK(tables[2].name == "Site");
  CHECK(tables[0].rows.size() == 9);    // 3 regions x 3 years
  CHECK(tables[1].rows.size() == 27);   // 9 villages x 3 years
  CHECK(tables[2].rows.size() == 54);   // 18 sites x 3 years
  CHECK(tables[1].columns == std::vector<std::string>{"Region", "Year", "Village"});
  CHECK(tables[2].columns == std::vector<std::string>{"Region", "Year", "Village", "Site"});
  for (const auto& table : tables)
    for (const auto& row : table.rows) {
      CHECK(row.low <= row.estimate);
      CHECK(row.estimate <= row.high);
      CHECK(row.estimate > 0.0);
      CHECK(row.high < 1.0);
    }

  SUBCASE("fixed-effect models give exactly one table") {
    const FittedModel glm = fit_glm(parse_formula("Result ~ Region + Year"), sim.data);
    CHECK(get_prevalence(glm).size() == 1);
  }

  SUBCASE("newdata prediction is monotone when the year coefficient is negative") {
    const FittedModel glm = fit_glm(parse_formula("Result ~ Region + Year"), sim.data);
    std::vector<std::map<std::string, Value>> newdata;
    for (double year : {3.0, 4.0, 5.0})
      newdata.push_back({{"Region", std::string("A")}, {"Year", year}});
    const auto tables2 = get_prevalence(glm, newdata);
    REQUIRE(tables2.size() == 1);
    REQUIRE(tables2[0].rows.size() == 3);
    const int year_idx = glm.beta.size() - 1;
    if (glm.beta[year_idx] < 0.0) {
      CHECK(tables2[0].rows[0].estimate > tables2[0].rows[1].estimate);
      CHECK(tables2[0].rows[1].estimate > tables2[0].rows[2].estimate);
    }
    CHECK_THROWS_AS(get_prevalence(glm, std::vector<std::map<std::string, Value>>{
                                            {{"Region", std::string("A")}}}),
                    DataError);
  }
}
