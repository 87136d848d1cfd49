#include "pooltest/mcmc.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <numeric>
#include <stdexcept>

#include "pooltest/parallel.hpp"
#include "pooltest/rng.hpp"
#include "pooltest/special.hpp"
#include "pooltest/types.hpp"

namespace pooltest {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::LLT<Eigen::MatrixXd> safe_llt(Eigen::MatrixXd m) {
  const int d = static_cast<int>(m.rows());
  double ridge = 1e-12 * std::max(1.0, m.trace() / d);
  for (int attempt = 0; attempt < 60; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt;
    m += ridge * Eigen::MatrixXd::Identity(d, d);
    ridge *= 10.0;
  }
  throw NumericError("proposal covariance is not positive definite");
}

struct ChainResult {
  std::vector<double> draws;  // iters x dim
  double acceptance = 0.0;
  bool stuck = false;
  std::vector<double> proposal_covariance;  // frozen kernel, row major
};

ChainResult run_chain(const TargetDensity& target, const std::vector<double>& init, const McmcConfig& cfg,
                      int chain_index) {
  const int d = target.dim;
  Rng rng(derive_seed(cfg.seed, {0xC4A11ULL, static_cast<std::uint64_t>(chain_index)}));

  Eigen::MatrixXd cov0 = Eigen::MatrixXd::Identity(d, d);
  if (!cfg.initial_proposal_covariance.empty()) {
    if (cfg.initial_proposal_covariance.size() != static_cast<std::size_t>(d) * d)
      throw std::invalid_argument("initial_proposal_covariance must be dim x dim");
    cov0 = Eigen::Map<const Eigen::MatrixXd>(cfg.initial_proposal_covariance.data(), d, d);
    cov0 = 0.5 * (cov0 + cov0.transpose().eval());
  }

  // Overdispersed start around the supplied initial point.
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(init.data(), d);
  double lp = kNegInf;
  {
    std::vector<double> cand(d);
    double scale = cfg.initial_jitter_scale;
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (int j = 0; j < d; ++j) cand[j] = init[j] + scale * std::sqrt(std::max(cov0(j, j), 0.0)) * rng.normal();
      const double l = target.log_density(cand);
      if (std::isfinite(l)) {
        x = Eigen::Map<const Eigen::VectorXd>(cand.data(), d);
        lp = l;
        break;
      }
      if (attempt % 10 == 9) scale *= 0.5;
    }
    if (!std::isfinite(lp)) {
      lp = target.log_density(init);
      if (!std::isfinite(lp)) throw NumericError("log density is not finite at the initial point");
      x = Eigen::Map<const Eigen::VectorXd>(init.data(), d);
    }
  }

  double log_scale = std::log(2.38 / std::sqrt(static_cast<double>(d)));
  Eigen::LLT<Eigen::MatrixXd> chol = safe_llt(cov0);

  const std::vector<std::vector<int>>& blocks = cfg.proposal_blocks;
  for (const auto& block : blocks) {
    for (int j : block) {
      if (j < 0 || j >= d) throw std::invalid_argument("proposal block index out of range");
    }
  }
  std::vector<double> block_log_scale(blocks.size());
  std::vector<Eigen::LLT<Eigen::MatrixXd>> block_chol(blocks.size());
  auto refresh_block_chols = [&](const Eigen::MatrixXd& full) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const int bd = static_cast<int>(blocks[b].size());
      Eigen::MatrixXd sub(bd, bd);
      for (int a = 0; a < bd; ++a)
        for (int c = 0; c < bd; ++c) sub(a, c) = full(blocks[b][a], blocks[b][c]);
      block_chol[b] = safe_llt(sub);
    }
  };
  for (std::size_t b = 0; b < blocks.size(); ++b)
    block_log_scale[b] = std::log(2.38 / std::sqrt(static_cast<double>(blocks[b].size())));
  refresh_block_chols(cov0);

  // Warmup covariance is accumulated with Welford updates and folded into
  // the proposal every kRefresh iterations.
  Eigen::VectorXd run_mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd run_m2 = Eigen::MatrixXd::Zero(d, d);
  long long run_n = 0;
  constexpr int kRefresh = 50;
  const int cov_start = std::max(50, d / 2);

  std::vector<double> proposal(d);
  Eigen::VectorXd z(d);

  struct MoveResult {
    double alpha = 0.0;
    bool accepted = false;
  };
  // One Metropolis move; `block` < 0 proposes the full vector, otherwise
  // only the block's coordinates move.
  auto propose = [&](int block) -> MoveResult {
    Eigen::VectorXd y = x;
    if (block < 0) {
      for (int j = 0; j < d; ++j) z[j] = rng.normal();
      const Eigen::VectorXd lz = chol.matrixL() * z;
      y += std::exp(log_scale) * lz;
    } else {
      const auto& ids = blocks[block];
      const int bd = static_cast<int>(ids.size());
      Eigen::VectorXd zb(bd);
      for (int j = 0; j < bd; ++j) zb[j] = rng.normal();
      const Eigen::VectorXd lz = block_chol[block].matrixL() * zb;
      for (int j = 0; j < bd; ++j) y[ids[j]] += std::exp(block_log_scale[block]) * lz[j];
    }
    for (int j = 0; j < d; ++j) proposal[j] = y[j];
    const double lp_new = target.log_density(proposal);
    const double log_alpha = lp_new - lp;
    MoveResult res;
    res.alpha = std::isfinite(lp_new) ? (log_alpha >= 0.0 ? 1.0 : std::exp(log_alpha)) : 0.0;
    if (std::isfinite(lp_new) && rng.uniform() < res.alpha) {
      x = y;
      lp = lp_new;
      res.accepted = true;
    }
    return res;
  };

  auto step = [&](bool adapt, int t) -> bool {
    const MoveResult full = propose(-1);
    std::vector<double> block_alpha(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) block_alpha[b] = propose(static_cast<int>(b)).alpha;
    if (adapt) {
      const double gamma = 1.0 / std::pow(t + 20.0, 0.7);
      log_scale += gamma * (full.alpha - cfg.target_accept);
      for (std::size_t b = 0; b < blocks.size(); ++b)
        block_log_scale[b] += gamma * (block_alpha[b] - std::max(cfg.target_accept, 0.3));
      run_n += 1;
      const Eigen::VectorXd delta = x - run_mean;
      run_mean += delta / static_cast<double>(run_n);
      run_m2 += delta * (x - run_mean).transpose();
      if (run_n > cov_start && t % kRefresh == kRefresh - 1) {
        Eigen::MatrixXd s = run_m2 / static_cast<double>(run_n - 1);
        if (!cfg.initial_proposal_covariance.empty()) {
          // Treat the supplied covariance as prior pseudo-observations so
          // early refreshes do not throw away a good starting kernel.
          double w0 = 25.0 * d;
          if (const char* env = std::getenv("POOLTEST_COV_PRIOR_W")) w0 = std::atof(env) * d;
          s = (w0 * cov0 + static_cast<double>(run_n) * s) / (w0 + static_cast<double>(run_n));
        }
        s = 0.5 * (s + s.transpose().eval());
        const double ridge = std::max(1e-12, 1e-8 * s.trace() / d);
        s += ridge * Eigen::MatrixXd::Identity(d, d);
        chol = safe_llt(s);
        refresh_block_chols(s);
      }
    }
    return full.accepted;
  };

  for (int t = 0; t < cfg.warmup_iters; ++t) step(true, t);

  ChainResult out;
  {
    const Eigen::MatrixXd l = chol.matrixL();
    const Eigen::MatrixXd frozen = std::exp(2.0 * log_scale) * (l * l.transpose());
    out.proposal_covariance.assign(frozen.data(), frozen.data() + frozen.size());
  }
  const int stored = cfg.sampling_iters / cfg.thin;
  out.draws.resize(static_cast<std::size_t>(stored) * d);
  long long accepted = 0;
  int next_slot = 0;
  for (int t = 0; t < cfg.sampling_iters; ++t) {
    if (step(false, t)) ++accepted;
    if ((t + 1) % cfg.thin == 0 && next_slot < stored) {
      for (int j = 0; j < d; ++j) out.draws[static_cast<std::size_t>(next_slot) * d + j] = x[j];
      ++next_slot;
    }
  }
  out.acceptance = static_cast<double>(accepted) / cfg.sampling_iters;
  out.stuck = out.acceptance < 0.01;
  return out;
}

}  // namespace

std::vector<double> PosteriorDraws::parameter_draws(int param) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(num_chains) * iters_per_chain);
  for (int c = 0; c < num_chains; ++c)
    for (int i = 0; i < iters_per_chain; ++i) out.push_back(value(c, i, param));
  return out;
}

double PosteriorDraws::mean(int param) const {
  const auto xs = parameter_draws(param);
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double PosteriorDraws::sd(int param) const {
  const auto xs = parameter_draws(param);
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / std::max<std::size_t>(xs.size() - 1, 1));
}

double PosteriorDraws::quantile(int param, double q) const {
  auto xs = parameter_draws(param);
  std::sort(xs.begin(), xs.end());
  return quantile_sorted(xs, q);
}

double PosteriorDraws::max_rhat() const {
  double m = 1.0;
  for (double r : split_rhat) m = std::max(m, r);
  return m;
}

double PosteriorDraws::min_ess() const {
  double m = std::numeric_limits<double>::infinity();
  for (double e : bulk_ess) m = std::min(m, e);
  return std::isfinite(m) ? m : 0.0;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (sorted.size() == 1) return sorted.front();
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::clamp(std::floor(h), 0.0, sorted.size() - 1.0));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = h - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

PosteriorDraws sample(const TargetDensity& target, const std::vector<double>& init, const McmcConfig& cfg) {
  if (target.dim <= 0 || static_cast<int>(init.size()) != target.dim)
    throw std::invalid_argument("initial point does not match target dimension");
  if (cfg.chains < 2) throw std::invalid_argument("at least 2 chains are required for diagnostics");
  if (cfg.warmup_iters < 100 || cfg.sampling_iters < 100)
    throw std::invalid_argument("warmup and sampling iterations must each be >= 100");
  if (cfg.thin < 1 || cfg.sampling_iters / cfg.thin < 8)
    throw std::invalid_argument("thinning leaves too few stored draws");
  if (!std::isfinite(target.log_density(init)))
    throw NumericError("log density is not finite at the initial point");

  std::vector<ChainResult> results(cfg.chains);
  parallel_for(cfg.chains, [&](std::size_t c) {
    results[c] = run_chain(target, init, cfg, static_cast<int>(c));
  });

  PosteriorDraws out;
  out.num_chains = cfg.chains;
  out.iters_per_chain = cfg.sampling_iters / cfg.thin;
  out.dim = target.dim;
  out.parameter_names = target.parameter_names;
  if (out.parameter_names.empty()) {
    for (int j = 0; j < target.dim; ++j) out.parameter_names.push_back("theta[" + std::to_string(j) + "]");
  }
  out.draws.reserve(static_cast<std::size_t>(cfg.chains) * out.iters_per_chain * target.dim);
  for (const ChainResult& r : results) out.draws.insert(out.draws.end(), r.draws.begin(), r.draws.end());
  for (const ChainResult& r : results) out.acceptance_rate.push_back(r.acceptance);
  for (const ChainResult& r : results) out.adapted_covariance.push_back(r.proposal_covariance);
  for (int c = 0; c < cfg.chains; ++c) {
    if (results[c].stuck)
      out.warnings.push_back("chain " + std::to_string(c) + " appears stuck (acceptance rate " +
                             std::to_string(results[c].acceptance) + ")");
  }

  out.split_rhat.resize(target.dim);
  out.rhat_degenerate.resize(target.dim);
  out.bulk_ess.resize(target.dim);
  for (int j = 0; j < target.dim; ++j) {
    std::vector<std::vector<double>> chains(cfg.chains);
    for (int c = 0; c < cfg.chains; ++c) {
      chains[c].resize(out.iters_per_chain);
      for (int i = 0; i < out.iters_per_chain; ++i) chains[c][i] = out.value(c, i, j);
    }
    bool degenerate = false;
    out.split_rhat[j] = split_rhat(chains, &degenerate);
    out.rhat_degenerate[j] = degenerate;
    out.bulk_ess[j] = bulk_ess(chains);
  }
  return out;
}

namespace {

// Split every chain in half; returns per-sequence (mean, variance, length).
std::vector<std::vector<double>> split_halves(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& chain : chains) {
    const std::size_t half = chain.size() / 2;
    halves.emplace_back(chain.begin(), chain.begin() + half);
    halves.emplace_back(chain.end() - half, chain.end());
  }
  return halves;
}

void validate_chains(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("diagnostics require at least 2 chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("diagnostics require equal-length chains");
    if (c.size() / 2 < 4) throw std::invalid_argument("diagnostics require at least 4 draws per split half");
  }
}

double sequence_mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sequence_var(const std::vector<double>& xs, double mean) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return s / static_cast<double>(xs.size() - 1);
}

}  // namespace

double split_rhat(const std::vector<std::vector<double>>& chains, bool* degenerate) {
  validate_chains(chains);
  const auto halves = split_halves(chains);
  const std::size_t m = halves.size();
  const double n = static_cast<double>(halves.front().size());

  std::vector<double> means(m), vars(m);
  for (std::size_t i = 0; i < m; ++i) {
    means[i] = sequence_mean(halves[i]);
    vars[i] = sequence_var(halves[i], means[i]);
  }
  const double grand = sequence_mean(means);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / static_cast<double>(m - 1);
  const double w = sequence_mean(vars);

  if (w <= 0.0) {
    // Constant chains: identical ones are converged by convention,
    // distinct constants are maximally unconverged.
    if (degenerate) *degenerate = true;
    return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  }
  if (degenerate) *degenerate = false;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::max(1.0, std::sqrt(var_plus / w));
}

double bulk_ess(const std::vector<std::vector<double>>& chains) {
  validate_chains(chains);
  const auto halves = split_halves(chains);
  const std::size_t m = halves.size();
  const std::size_t n = halves.front().size();

  // Rank-normalize the pooled draws (average ranks for ties).
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < n; ++t) pooled.emplace_back(halves[i][t], i * n + t);
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> z(m * n);
  const double total = static_cast<double>(m * n);
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j + 1 < pooled.size() && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    const double zval = normal_quantile((avg_rank - 0.375) / (total + 0.25));
    for (std::size_t k = i; k <= j; ++k) z[pooled[k].second] = zval;
    i = j + 1;
  }

  std::vector<std::vector<double>> ranked(m, std::vector<double>(n));
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t t = 0; t < n; ++t) ranked[s][t] = z[s * n + t];

  std::vector<double> means(m), vars(m);
  for (std::size_t s = 0; s < m; ++s) {
    means[s] = sequence_mean(ranked[s]);
    vars[s] = sequence_var(ranked[s], means[s]);
  }
  const double w = sequence_mean(vars);
  const double grand = sequence_mean(means);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= static_cast<double>(n) / std::max<double>(static_cast<double>(m) - 1.0, 1.0);
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w + b / static_cast<double>(n);
  if (!(var_plus > 0.0)) return static_cast<double>(m * n);

  // Autocovariances are only needed up to the Geyer truncation lag, so
  // compute them lazily.
  auto rho_at = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
      double sum = 0.0;
      for (std::size_t t = lag; t < n; ++t) sum += (ranked[s][t] - means[s]) * (ranked[s][t - lag] - means[s]);
      acov += sum / static_cast<double>(n);
    }
    acov /= static_cast<double>(m);
    return 1.0 - (w - acov) / var_plus;
  };

  // Geyer initial positive sequence: accumulate paired sums until the
  // first negative pair.
  double tau = -1.0;  // becomes 1 + 2 * sum(rho) over the kept lags
  std::size_t lag = 0;
  double prev_pair = std::numeric_limits<double>::infinity();
  while (lag + 1 < n) {
    double pair = rho_at(lag) + rho_at(lag + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);  // enforce monotone decrease
    prev_pair = pair;
    tau += 2.0 * pair;
    lag += 2;
  }
  tau = std::max(tau, 1.0 / std::log10(total + 10.0));
  const double ess = total / tau;
  return std::min(ess, total * std::log10(total));
}

}  // namespace pooltest
