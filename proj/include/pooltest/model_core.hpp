#pragma once

#include <utility>
#include <vector>

#include "pooltest/types.hpp"

namespace pooltest {

/// Probability that a pool of `size` independent specimens tests positive
/// when individual prevalence is `p`: 1 - (1-p)^size, evaluated stably.
double pool_positive_prob(double p, int size);

/// log(1 - exp(-x)) for x > 0 with the usual branch switch near log 2.
double log1mexp(double x);

/// Per-pool sufficient statistics for the scalar-prevalence likelihood:
/// the number of individuals in negative pools and, for positive pools,
/// counts per distinct pool size.
struct PooledSuffStats {
  long long negatives_individuals = 0;  // N - N+
  std::vector<std::pair<int, long long>> positive_size_counts;
  long long num_pools = 0;
  long long num_individuals = 0;

  static PooledSuffStats from(const PoolDataset& data);
  bool any_positive() const { return !positive_size_counts.empty(); }
  bool any_negative() const { return negatives_individuals > 0; }
};

/// Joint log-likelihood of the dataset at prevalence p, dropping the
/// binomial-coefficient constants. -inf at impossible boundary pairs,
/// 0 for an empty dataset.
double pooled_log_likelihood(const PoolDataset& data, double p);
double pooled_log_likelihood(const PooledSuffStats& stats, double p);

/// Same likelihood parameterized by log(1-p); used by the quadrature where
/// log(1-p) is available exactly.
double pooled_log_likelihood_log1mp(const PooledSuffStats& stats, double log1mp);

/// Analytic d/dp and d^2/dp^2 of pooled_log_likelihood for p in (0,1).
std::pair<double, double> score_and_curvature(const PoolDataset& data, double p);
std::pair<double, double> score_and_curvature(const PooledSuffStats& stats, double p);

/// Link functions. apply maps a probability in (0,1) to the real line;
/// inverse clamps its output into the open interval by one ulp.
double link_apply(Link link, double theta);
double link_inverse(Link link, double eta);

/// log(1-p), d/deta, d^2/deta^2 where p = link_inverse(link, eta).
struct LinkLogTerms {
  double lq;    // log(1 - p)
  double dlq;   // d lq / d eta
  double d2lq;  // d^2 lq / d eta^2
};
LinkLogTerms link_log1m_terms(Link link, double eta);

/// Pool-level Bernoulli log-likelihood contribution and its first two
/// derivatives in the linear predictor eta (p = link_inverse(link, eta),
/// pool positive with probability 1-(1-p)^size).
struct EtaDerivatives {
  double ll;
  double d1;
  double d2;
};
double pool_eta_loglik(Link link, bool positive, int size, double eta);
EtaDerivatives pool_eta_derivatives(Link link, bool positive, int size, double eta);

}  // namespace pooltest
