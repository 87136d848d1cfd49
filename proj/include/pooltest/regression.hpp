#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "pooltest/design.hpp"
#include "pooltest/formula.hpp"
#include "pooltest/mcmc.hpp"
#include "pooltest/types.hpp"

namespace pooltest {

enum class Framework { frequentist, bayesian };

struct RandomEffectSummary {
  std::string label;
  std::vector<std::string> group_columns;
  std::string slope;  // empty for intercept-only terms
  std::vector<std::string> level_keys;
  std::vector<double> sd;  // one entry, or two for intercept-slope blocks
  double corr = 0.0;       // intercept-slope correlation when applicable
};

struct FitMetadata {
  double log_likelihood = 0.0;  // frequentist (Laplace-approximate for GLMMs)
  int iterations = 0;
  std::vector<std::string> warnings;
  double max_rhat = 1.0;  // bayesian
  double min_ess = 0.0;   // bayesian
};

/// One row of covariate values observed in (or supplied to) a model,
/// together with the group level each random term assigns it to.
struct ObservedRow {
  std::map<std::string, Value> values;
  std::vector<int> term_levels;
};

struct FittedModel {
  ModelFormula formula;
  Framework framework = Framework::frequentist;
  FixedSpec fixed;
  std::vector<GroupTerm> groups;  // per-pool index vectors are not retained
  std::vector<ObservedRow> observed;

  // Frequentist results
  Eigen::VectorXd beta;
  Eigen::MatrixXd beta_cov;
  std::vector<double> theta;  // variance parameters (log sd / log-Cholesky)
  Eigen::VectorXd u_modes;
  Eigen::MatrixXd u_cov;  // conditional covariance of u at the optimum

  // Bayesian results; parameter layout is [beta, variance params, u]
  PosteriorDraws draws;
  std::vector<int> var_param_offset;  // per term, into the draw vector
  std::uint64_t seed = 0;

  std::vector<RandomEffectSummary> random_effects;
  FitMetadata meta;

  int num_fixed() const { return fixed.dim(); }
  int num_var_params() const;
  int u_offset() const { return num_fixed() + num_var_params(); }
};

/// Default priors for the Bayesian fit: Normal(0, 2.5^2) slopes,
/// Normal(0, 5^2) intercept, half-Normal(0, 1) standard deviations.
struct RegressionPriors {
  double coef_sd = 2.5;
  double intercept_sd = 5.0;
  double sigma_scale = 1.0;
};

/// Fixed-effects pooled-binomial GLM by Newton-Raphson with step halving.
/// Covariance is the inverse observed information. Rank-deficient designs
/// and non-convergence raise errors naming the problem.
FittedModel fit_glm(const ModelFormula& formula, const PoolDataset& data);

/// The cloglog-offset route: a plain Bernoulli GLM on pool results with
/// log(pool size) added to the linear predictor. Equivalent to
/// fit_glm with the cloglog link; kept as an independent cross-check.
FittedModel fit_glm_offset_bernoulli(const ModelFormula& formula, const PoolDataset& data);

/// Mixed-effects fit maximizing the Laplace-approximate marginal
/// likelihood: inner Newton over the random effects, outer BFGS over
/// (beta, log-scale variance parameters).
FittedModel fit_glmm_laplace(const ModelFormula& formula, const PoolDataset& data);

/// Bayesian fit of the same models via the adaptive-Metropolis engine.
FittedModel fit_bayes(const ModelFormula& formula, const PoolDataset& data,
                      const RegressionPriors& priors = {}, const McmcConfig& mcmc_cfg = {});

struct PrevalenceTable {
  std::string name;  // "PopulationEffects" or a grouping label
  std::vector<std::string> columns;
  struct Row {
    std::vector<Value> values;
    double estimate, low, high;
  };
  std::vector<Row> rows;
  bool bayesian = false;
  double level = 0.95;
};

/// Per-individual prevalence estimates at every level of the model's
/// hierarchy ("PopulationEffects" first). With `newdata` only the
/// population table is produced, in the given row order.
std::vector<PrevalenceTable> get_prevalence(
    const FittedModel& model,
    const std::optional<std::vector<std::map<std::string, Value>>>& newdata = std::nullopt,
    double level = 0.95);

}  // namespace pooltest
