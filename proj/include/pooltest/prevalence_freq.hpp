#pragma once

#include <utility>
#include <vector>

#include "pooltest/types.hpp"

namespace pooltest {

/// Maximum likelihood estimate of prevalence on [0,1]. Exactly 0 when all
/// pools are negative, exactly 1 when all are positive; otherwise a
/// safeguarded Newton iteration on the score.
double prevalence_mle(const PoolDataset& data);

/// Likelihood-ratio (Wilks) confidence interval at the given coverage.
/// When all pools are negative the lower bound is 0 and the upper bound is
/// the closed-form boundary solution; the all-positive case mirrors it.
std::pair<double, double> wilks_interval(const PoolDataset& data, double level = 0.95);

/// MLE + Wilks interval bundled into a PrevalenceEstimate.
PrevalenceEstimate estimate_prevalence_freq(const PoolDataset& data, double level = 0.95);

/// Independent frequentist estimates for every observed combination of the
/// stratifying columns, ordered lexicographically by stratum values.
std::vector<PrevalenceEstimate> estimate_stratified(const PoolDataset& data,
                                                    const std::vector<std::string>& strata,
                                                    double level = 0.95);

}  // namespace pooltest
