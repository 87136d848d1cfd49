#pragma once

#include <string>

#include "pooltest/regression.hpp"

namespace pooltest {

/// Persist a fitted model as a self-describing JSON artifact
/// (schema_version 1). Bayesian fits store their full draw matrix in a
/// sidecar CSV next to the artifact; frequentist mixed fits do the same
/// with the conditional covariance of the random effects.
void save_model(const FittedModel& model, const std::string& json_path);

FittedModel load_model(const std::string& json_path);

}  // namespace pooltest
