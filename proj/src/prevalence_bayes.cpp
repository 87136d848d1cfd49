#include "pooltest/prevalence_bayes.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <numeric>
#include <cmath>
#include <limits>
#include <map>

#include "fit_common.hpp"
#include "pooltest/model_core.hpp"
#include "pooltest/regression.hpp"
#include "pooltest/parallel.hpp"
#include "pooltest/quadrature.hpp"
#include "pooltest/rng.hpp"

namespace pooltest {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_prior(const BetaPrior& prior) {
  if (!(prior.alpha > 0.0) || !(prior.beta > 0.0))
    throw std::invalid_argument("Beta prior shapes must be positive");
}

// The 1-D posterior is integrated in u with p = sin^2(u), which removes the
// Jeffreys-prior endpoint singularities exactly: log p = 2 log sin u,
// log(1-p) = 2 log cos u, and the Jacobian is 2 sin u cos u.
struct TransformedPosterior {
  PooledSuffStats stats;
  BetaPrior prior;

  double operator()(double u) const {
    const double su = std::sin(u), cu = std::cos(u);
    if (su <= 0.0 || cu <= 0.0) return kNegInf;
    const double log_p = 2.0 * std::log(su);
    const double log_1mp = 2.0 * std::log(cu);
    double v = pooled_log_likelihood_log1mp(stats, log_1mp);
    v += (prior.alpha - 1.0) * log_p + (prior.beta - 1.0) * log_1mp;
    v += std::log(2.0) + std::log(su) + std::log(cu);
    return v;
  }
};

struct Posterior1dResult {
  double mean;
  double quantile_low;
  double quantile_high;
  double log_marginal;  // log integral of likelihood * normalized Beta prior
};

Posterior1dResult integrate_posterior(const PoolDataset& data, const BetaPrior& prior, double level,
                                      bool all_negative, bool all_positive) {
  const TransformedPosterior logf{PooledSuffStats::from(data), prior};
  const LogQuadrature quad(logf, 0.0, M_PI / 2.0, 1e-10, 20);

  const double log_z = quad.log_total();
  const double log_mean_num = quad.log_integral([&](double u) {
    const double su = std::sin(u);
    return logf(u) + 2.0 * std::log(su);
  });

  Posterior1dResult out{};
  out.mean = std::exp(log_mean_num - log_z);
  const double tail = 1.0 - level;
  double lo_frac = tail / 2.0, hi_frac = 1.0 - tail / 2.0;
  if (all_positive) lo_frac = tail;   // one-sided: upper bound is 1
  if (all_negative) hi_frac = level;  // one-sided: lower bound is 0
  const double u_lo = quad.quantile(lo_frac);
  const double u_hi = quad.quantile(hi_frac);
  out.quantile_low = std::pow(std::sin(u_lo), 2);
  out.quantile_high = std::pow(std::sin(u_hi), 2);

  // The quadrature is over likelihood * unnormalized Beta kernel; divide by
  // B(alpha, beta) to get the marginal likelihood under the proper prior.
  const double log_beta_fn =
      std::lgamma(prior.alpha) + std::lgamma(prior.beta) - std::lgamma(prior.alpha + prior.beta);
  out.log_marginal = log_z - log_beta_fn;
  return out;
}

}  // namespace

double HierSpec::scale_for(std::size_t level) const {
  if (sd_prior_scale.empty()) return 1.0;
  if (sd_prior_scale.size() == 1) return sd_prior_scale.front();
  if (level < sd_prior_scale.size()) return sd_prior_scale[level];
  throw std::invalid_argument("sd_prior_scale must have one entry or one per hierarchy level");
}

PrevalenceEstimate posterior_1d(const PoolDataset& data, const BetaPrior& prior, double level) {
  if (data.empty()) throw DataError("cannot estimate prevalence from an empty dataset");
  check_prior(prior);
  if (!(level > 0.0) || !(level < 1.0)) throw std::invalid_argument("interval level must be in (0,1)");

  const bool all_neg = data.all_negative();
  const bool all_pos = data.all_positive();
  const Posterior1dResult r = integrate_posterior(data, prior, level, all_neg, all_pos);

  PrevalenceEstimate est;
  est.point = r.mean;
  est.interval_low = all_neg ? 0.0 : r.quantile_low;
  est.interval_high = all_pos ? 1.0 : r.quantile_high;
  est.level = level;
  est.method = EstimateMethod::bayes_quadrature;
  est.num_pools = static_cast<long long>(data.num_pools());
  est.num_individuals = data.total_individuals();
  return est;
}

PrevalenceEstimate posterior_with_absence(const PoolDataset& data, const AbsencePrior& prior, double level) {
  if (data.empty()) throw DataError("cannot estimate prevalence from an empty dataset");
  check_prior(prior.continuous_part);
  if (!(prior.prob_absent_prior >= 0.0) || !(prior.prob_absent_prior < 1.0))
    throw std::invalid_argument("prior probability of absence must be in [0,1)");

  PrevalenceEstimate est = posterior_1d(data, prior.continuous_part, level);
  if (!data.all_negative()) {
    est.prob_absent = 0.0;
    return est;
  }
  // All pools negative: exp(ll(0)) = 1, so the spike's unnormalized mass is
  // just the prior weight, against the continuous marginal likelihood m.
  const Posterior1dResult r =
      integrate_posterior(data, prior.continuous_part, level, /*all_negative=*/true, /*all_positive=*/false);
  const double pi0 = prior.prob_absent_prior;
  const double m = std::exp(r.log_marginal);
  est.prob_absent = pi0 / (pi0 + (1.0 - pi0) * m);
  return est;
}

namespace {

// Intercept-only logistic GLMM over the declared hierarchy, expressed with
// the regression design machinery so the grouping and u layout match the
// mixed-model fitters. Parameter layout: [mu, log_sigma per level, u].
// Centered parameterization: the data constrain u directly here, and the
// centered chains stay stable in weakly informed strata.
struct HierModel {
  ModelDesign design;
  BetaPrior prior;
  std::vector<double> sd_scales;

  int levels() const { return static_cast<int>(design.terms.size()); }
  int dim() const { return 1 + levels() + design.u_dim; }

  double log_posterior(const std::vector<double>& x) const {
    const int n_levels = levels();
    const double mu = x[0];
    double lp = 0.0;

    // Beta prior on inv-logit(mu) with the logistic Jacobian.
    {
      const double p = link_inverse(Link::logit, mu);
      lp += (prior.alpha - 1.0) * std::log(p) + (prior.beta - 1.0) * std::log1p(-p);
      lp += std::log(p) + std::log1p(-p);  // |dp/dmu| = p(1-p)
    }

    const Eigen::Map<const Eigen::VectorXd> u(x.data() + 1 + n_levels, design.u_dim);
    for (int l = 0; l < n_levels; ++l) {
      const double log_sigma = x[1 + l];
      if (log_sigma > 10.0) return kNegInf;
      const double sigma = std::exp(log_sigma);
      const double scale = sd_scales[l];
      // half-Normal(0, scale) on sigma plus the log-scale Jacobian.
      lp += -0.5 * sigma * sigma / (scale * scale) + log_sigma;
      const GroupTerm& term = design.terms[l];
      double ss = 0.0;
      for (int g = 0; g < term.num_levels(); ++g) {
        const double ug = u[term.u_index(g)];
        ss += ug * ug;
      }
      lp += -0.5 * ss / (sigma * sigma) - term.num_levels() * log_sigma;
    }

    Eigen::VectorXd beta(1);
    beta[0] = mu;
    const Eigen::VectorXd eta = design.linear_predictor(beta, u);
    for (std::size_t i = 0; i < design.num_pools(); ++i) {
      lp += pool_eta_loglik(Link::logit, design.positive[i] != 0, design.sizes[i], eta[i]);
      if (!std::isfinite(lp)) return kNegInf;
    }
    return lp;
  }
};

ModelFormula hier_formula(const PoolDataset& data, const HierSpec& hier) {
  ModelFormula f;
  f.response = data.result_column();
  f.link = Link::logit;
  std::vector<std::string> prefix;
  for (const std::string& level : hier.levels) {
    prefix.push_back(level);
    ModelFormula::RandomTerm term;
    term.group_columns = prefix;
    std::string group;
    for (const std::string& g : prefix) {
      if (!group.empty()) group += ':';
      group += g;
    }
    term.display = "(1 | " + group + ")";
    f.random_terms.push_back(std::move(term));
  }
  f.text = "(intercept-only hierarchical model)";
  return f;
}

PrevalenceEstimate hier_prevalence_one(const PoolDataset& data, const HierSpec& hier, const BetaPrior& prior,
                                       double level, McmcConfig cfg) {
  HierModel model;
  model.design = ModelDesign::build(hier_formula(data, hier), data);
  model.prior = prior;
  for (std::size_t l = 0; l < hier.levels.size(); ++l) model.sd_scales.push_back(hier.scale_for(l));
  const int n_levels = model.levels();
  const int dim = model.dim();

  TargetDensity target;
  target.dim = dim;
  target.log_density = [&model](const std::vector<double>& x) { return model.log_posterior(x); };
  target.parameter_names.push_back("mu");
  for (int l = 0; l < n_levels; ++l)
    target.parameter_names.push_back("log_sigma[" + hier.levels[l] + "]");
  for (const GroupTerm& term : model.design.terms)
    for (const std::string& key : term.level_keys)
      target.parameter_names.push_back("u[" + term.label + ":" + key + "]");

  // Start at (or near) the Laplace mode of the matching GLMM and shape the
  // proposal with the joint mode covariance; a fallback heuristic start
  // covers separated strata.
  std::vector<double> init(dim, 0.0);
  std::vector<std::array<double, 2>> term_sd(n_levels, {0.3, 0.0});
  {
    const double n_plus = static_cast<double>(data.positive_individuals());
    const double n_total = static_cast<double>(data.total_individuals());
    const double p0 = std::clamp((n_plus + 0.5) / (n_total + 1.0), 1e-6, 1.0 - 1e-6);
    init[0] = link_apply(Link::logit, p0);
    for (int l = 0; l < n_levels; ++l) init[1 + l] = std::log(std::min(0.5 * model.sd_scales[l], 0.5));
  }
  bool have_mode = false;
  try {
    const FittedModel lap = fit_glmm_laplace(hier_formula(data, hier), data);
    init[0] = lap.beta[0];
    for (int l = 0; l < n_levels; ++l) {
      const double sd = std::clamp(lap.random_effects[l].sd[0], 0.02, 5.0);
      init[1 + l] = std::log(sd);
      term_sd[l] = {sd, 0.0};
    }
    for (int j = 0; j < model.design.u_dim; ++j) init[1 + n_levels + j] = lap.u_modes[j];
    have_mode = true;
  } catch (const std::exception&) {
    // keep the heuristic start
  }

  std::vector<double> cov(static_cast<std::size_t>(dim) * dim, 0.0);
  {
    Eigen::VectorXd beta0(1);
    beta0[0] = init[0];
    Eigen::Map<const Eigen::VectorXd> u0(init.data() + 1 + n_levels, model.design.u_dim);
    const Eigen::MatrixXd jcov =
        detail::joint_mode_covariance(model.design, beta0, u0, {1.0}, term_sd);
    auto dst = [&](int a) { return a == 0 ? 0 : n_levels + a; };
    for (int a = 0; a < jcov.rows(); ++a)
      for (int b = 0; b < jcov.cols(); ++b)
        cov[static_cast<std::size_t>(dst(a)) * dim + dst(b)] = jcov(a, b);
    const double sigma_var = have_mode ? 0.04 : 0.25;
    for (int l = 0; l < n_levels; ++l)
      cov[static_cast<std::size_t>(1 + l) * dim + (1 + l)] = sigma_var;
  }
  cfg.initial_proposal_covariance = std::move(cov);
  // (mu, log sigmas) get their own fast block on top of the global walk.
  std::vector<int> hyper_block;
  for (int j = 0; j <= n_levels; ++j) hyper_block.push_back(j);
  cfg.proposal_blocks = {hyper_block};

  const PosteriorDraws draws = sample(target, init, cfg);

  // Population prevalence per draw: average inv-logit(mu + sum_l sigma_l z)
  // over a fixed set of fresh standard-normal replicates.
  constexpr int kMarginalReplicates = 64;
  const int total_draws = draws.num_chains * draws.iters_per_chain;
  std::vector<double> prev(total_draws);
  for (int c = 0, k = 0; c < draws.num_chains; ++c) {
    for (int i = 0; i < draws.iters_per_chain; ++i, ++k) {
      Rng zrng(derive_seed(cfg.seed, {0x4D41ULL, static_cast<std::uint64_t>(k)}));
      const double mu = draws.value(c, i, 0);
      double acc = 0.0;
      for (int r = 0; r < kMarginalReplicates; ++r) {
        double eta = mu;
        for (int l = 0; l < n_levels; ++l) eta += std::exp(draws.value(c, i, 1 + l)) * zrng.normal();
        acc += link_inverse(Link::logit, eta);
      }
      prev[k] = acc / kMarginalReplicates;
    }
  }

  std::vector<double> sorted = prev;
  std::sort(sorted.begin(), sorted.end());
  const bool all_neg = data.all_negative();
  const bool all_pos = data.all_positive();
  const double tail = 1.0 - level;

  PrevalenceEstimate est;
  est.point = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  est.interval_low = all_neg ? 0.0 : quantile_sorted(sorted, all_pos ? tail : tail / 2.0);
  est.interval_high = all_pos ? 1.0 : quantile_sorted(sorted, all_neg ? level : 1.0 - tail / 2.0);
  est.level = level;
  est.method = EstimateMethod::bayes_mcmc_hier;
  est.num_pools = static_cast<long long>(data.num_pools());
  est.num_individuals = data.total_individuals();

  ConvergenceInfo conv;
  conv.max_rhat = draws.max_rhat();
  conv.min_ess = draws.min_ess();
  conv.flagged = conv.max_rhat > 1.05 || conv.min_ess < 100.0 || !draws.warnings.empty();
  if (conv.flagged) {
    conv.message = "max split R-hat " + std::to_string(conv.max_rhat) + ", min bulk ESS " +
                   std::to_string(conv.min_ess);
    for (const std::string& w : draws.warnings) conv.message += "; " + w;
  }
  est.convergence = conv;
  return est;
}

}  // namespace

std::vector<PrevalenceEstimate> hier_prevalence(const PoolDataset& data, const HierSpec& hier,
                                                const BetaPrior& prior, const std::vector<std::string>& strata,
                                                double level, const McmcConfig& mcmc_cfg) {
  if (data.empty()) throw DataError("cannot estimate prevalence from an empty dataset");
  if (hier.levels.empty()) throw std::invalid_argument("hierarchy must list at least one column");
  check_prior(prior);
  for (const std::string& col : hier.levels) {
    if (!data.has_column(col)) throw DataError("unknown hierarchy column '" + col + "'");
  }

  const std::vector<Stratum> cells = stratify(data, strata);
  std::vector<PrevalenceEstimate> out(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    McmcConfig cfg = mcmc_cfg;
    cfg.seed = derive_seed(mcmc_cfg.seed, {0x57ULL, static_cast<std::uint64_t>(i)});
    PrevalenceEstimate est = hier_prevalence_one(cells[i].data, hier, prior, level, cfg);
    est.stratum = cells[i].key;
    out[i] = std::move(est);
  });
  return out;
}

}  // namespace pooltest
