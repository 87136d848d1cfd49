#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "pooltest/design.hpp"
#include "pooltest/regression.hpp"

namespace pooltest::detail {

/// Log-likelihood, gradient and negative Hessian of the fixed-effect model
/// sum_i loglik(link, y_i, s_i, x_i' beta + offset_i).
struct GlmObjective {
  double ll = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd neg_hessian;
};
GlmObjective glm_objective(const Eigen::MatrixXd& X, const std::vector<int>& sizes,
                           const std::vector<char>& positive, Link link, const Eigen::VectorXd& beta,
                           const Eigen::VectorXd& offset, bool with_derivatives);

/// Newton-Raphson with step halving; throws on rank deficiency or
/// non-convergence. Returns (beta, covariance, loglik, iterations).
struct NewtonResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov;
  double log_likelihood = 0.0;
  int iterations = 0;
};
NewtonResult newton_glm(const Eigen::MatrixXd& X, const std::vector<int>& sizes,
                        const std::vector<char>& positive, Link link, const Eigen::VectorXd& offset,
                        const std::vector<FixedSpec::Column>& columns);

/// Deduplicated covariate/grouping rows observed in the data, in
/// lexicographic order of their displayed values.
std::vector<ObservedRow> collect_observed_rows(const ModelDesign& design, const PoolDataset& data);

/// Number of variance parameters for a term (1, or 3 for a 2x2 block).
int var_params_for(const GroupTerm& term);

/// Copy of the group terms without the per-pool index vectors; prediction
/// works from observed rows, so fitted models do not retain them.
std::vector<GroupTerm> strip_pool_vectors(const std::vector<GroupTerm>& terms);

/// Gaussian approximation of the joint (beta, u) posterior at the given
/// point: inverse of the negative joint Hessian with normal priors of the
/// given precisions on beta and per-term random-effect SDs. Used to shape
/// initial MCMC proposals; the cross blocks carry the fixed-effect /
/// random-effect anticorrelation the samplers need.
Eigen::MatrixXd joint_mode_covariance(const ModelDesign& design, const Eigen::VectorXd& beta,
                                      const Eigen::VectorXd& u,
                                      const std::vector<double>& beta_prior_precision,
                                      const std::vector<std::array<double, 2>>& term_sd);

/// Display columns of prediction table k (0 = population): fixed source
/// covariates plus the group columns of the first k terms, deduplicated.
std::vector<std::string> table_columns(const FittedModel& model, std::size_t k);

}  // namespace pooltest::detail
