#pragma once

#include <string>
#include <vector>

#include "pooltest/mcmc.hpp"
#include "pooltest/types.hpp"

namespace pooltest {

struct BetaPrior {
  double alpha = 0.5;  // Jeffreys by default
  double beta = 0.5;
};

/// Point mass at p = 0 mixed with a continuous Beta prior.
struct AbsencePrior {
  double prob_absent_prior = 0.0;
  BetaPrior continuous_part;
};

/// Hierarchy columns (outermost first) and half-normal prior scales for
/// the per-level random-effect standard deviations.
struct HierSpec {
  std::vector<std::string> levels;
  std::vector<double> sd_prior_scale;  // broadcast to 1.0 when empty

  double scale_for(std::size_t level) const;
};

/// Posterior mean and equal-tailed credible interval for the Beta-prior
/// model, computed by deterministic quadrature. If all pools are positive
/// the interval is (1-level quantile, 1]; all negative gives [0, level
/// quantile).
PrevalenceEstimate posterior_1d(const PoolDataset& data, const BetaPrior& prior = {}, double level = 0.95);

/// Spike-and-slab variant: also reports the posterior probability that the
/// marker is absent, which is zero as soon as any pool is positive. The
/// continuous summary is conditional on presence.
PrevalenceEstimate posterior_with_absence(const PoolDataset& data, const AbsencePrior& prior,
                                          double level = 0.95);

/// Intercept-only logistic GLMM with one random intercept per hierarchy
/// level, fitted independently per stratum by MCMC. The reported point is
/// the posterior mean of the population (marginal) prevalence.
std::vector<PrevalenceEstimate> hier_prevalence(const PoolDataset& data, const HierSpec& hier,
                                                const BetaPrior& prior = {},
                                                const std::vector<std::string>& strata = {},
                                                double level = 0.95, const McmcConfig& mcmc_cfg = {});

}  // namespace pooltest
