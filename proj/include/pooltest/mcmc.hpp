#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pooltest {

/// Unnormalized log posterior over a real parameter vector. -inf marks
/// zero-density points; the callable must be safe to evaluate from
/// several threads at once.
struct TargetDensity {
  int dim = 0;
  std::function<double(const std::vector<double>&)> log_density;
  std::vector<std::string> parameter_names;
};

struct McmcConfig {
  int chains = 4;
  int warmup_iters = 1000;
  int sampling_iters = 1000;
  std::uint64_t seed = 0;
  double target_accept = 0.4;
  double initial_jitter_scale = 0.1;
  /// Keep every thin-th post-warmup draw.
  int thin = 1;
  /// Optional starting proposal covariance (dim x dim, row major). The
  /// warmup adaptation refines it; identity when empty.
  std::vector<double> initial_proposal_covariance;
  /// Optional extra proposal blocks. Every iteration makes one full-vector
  /// proposal plus one block-restricted Gaussian proposal per entry, each
  /// with its own adapted scale. Low-dimensional hyperparameter blocks mix
  /// far faster than the global walk drags them.
  std::vector<std::vector<int>> proposal_blocks;
};

struct PosteriorDraws {
  int num_chains = 0;
  int iters_per_chain = 0;  // stored (post-thinning) draws per chain
  int dim = 0;
  std::vector<std::string> parameter_names;
  /// Layout: chain-major, then iteration, then parameter.
  std::vector<double> draws;
  std::vector<double> split_rhat;       // per parameter
  std::vector<bool> rhat_degenerate;    // zero-variance convention applied
  std::vector<double> bulk_ess;         // per parameter
  std::vector<double> acceptance_rate;  // per chain
  /// Frozen post-warmup proposal covariance per chain (dim x dim, row
  /// major), kept for adaptation diagnostics.
  std::vector<std::vector<double>> adapted_covariance;
  std::vector<std::string> warnings;

  double value(int chain, int iter, int param) const {
    return draws[(static_cast<std::size_t>(chain) * iters_per_chain + iter) * dim + param];
  }
  /// All stored draws of one parameter, chains concatenated.
  std::vector<double> parameter_draws(int param) const;
  double mean(int param) const;
  double sd(int param) const;
  /// Equal-tailed sample quantile (linear interpolation).
  double quantile(int param, double q) const;
  double max_rhat() const;
  double min_ess() const;
};

/// Adaptive random-walk Metropolis. Proposal covariance is learned from
/// the warmup history while a Robbins-Monro recursion tunes the global
/// scale toward `target_accept`; both freeze when sampling starts, so the
/// post-warmup kernel satisfies detailed balance. Given the same seed,
/// config and target the draws are bit-identical for any thread count.
PosteriorDraws sample(const TargetDensity& target, const std::vector<double>& init, const McmcConfig& cfg);

/// Split-chain potential scale reduction for one parameter. Chains are the
/// stored sequences (one vector per chain, equal lengths). All-constant
/// input is reported as 1.0 with `degenerate` set.
double split_rhat(const std::vector<std::vector<double>>& chains, bool* degenerate = nullptr);

/// Rank-normalized bulk effective sample size, autocorrelation sums
/// truncated at the first negative paired sum.
double bulk_ess(const std::vector<std::vector<double>>& chains);

/// Type-7 quantile of an already sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q);

}  // namespace pooltest
