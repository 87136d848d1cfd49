#include <algorithm>
#include <cmath>
#include <limits>

#include "fit_common.hpp"
#include "pooltest/model_core.hpp"
#include "pooltest/rng.hpp"

namespace pooltest {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Parameter block layout: [beta (p), variance params (k), u (q)].
// Variance params per term: log sd, or (log sd1, log sd2, atanh rho).
struct BayesModel {
  const ModelDesign& design;
  RegressionPriors priors;
  std::vector<int> var_offset;  // per term, relative to the var block
  int var_dim = 0;

  explicit BayesModel(const ModelDesign& d, const RegressionPriors& pr) : design(d), priors(pr) {
    for (const GroupTerm& term : d.terms) {
      var_offset.push_back(var_dim);
      var_dim += detail::var_params_for(term);
    }
  }

  int dim() const { return design.fixed.dim() + var_dim + design.u_dim; }

  double log_posterior(const std::vector<double>& x) const {
    const int p = design.fixed.dim();
    const Eigen::Map<const Eigen::VectorXd> beta(x.data(), p);
    const double* var = x.data() + p;
    const Eigen::Map<const Eigen::VectorXd> u(x.data() + p + var_dim, design.u_dim);

    double lp = 0.0;
    for (int j = 0; j < p; ++j) {
      const double sd = j == 0 ? priors.intercept_sd : priors.coef_sd;
      lp += -0.5 * beta[j] * beta[j] / (sd * sd);
    }

    for (std::size_t t = 0; t < design.terms.size(); ++t) {
      const GroupTerm& term = design.terms[t];
      const double* v = var + var_offset[t];
      if (term.inner_dim == 1) {
        const double log_sd = v[0];
        if (log_sd > 8.0) return kNegInf;
        const double sd = std::exp(log_sd);
        lp += -0.5 * sd * sd / (priors.sigma_scale * priors.sigma_scale) + log_sd;
        double ss = 0.0;
        for (int l = 0; l < term.num_levels(); ++l) {
          const double ul = u[term.u_index(l)];
          ss += ul * ul;
        }
        lp += -0.5 * ss / (sd * sd) - term.num_levels() * log_sd;
      } else {
        const double log_sd1 = v[0], log_sd2 = v[1], a = std::clamp(v[2], -15.0, 15.0);
        if (log_sd1 > 8.0 || log_sd2 > 8.0) return kNegInf;
        const double sd1 = std::exp(log_sd1), sd2 = std::exp(log_sd2);
        const double rho = std::tanh(a);
        const double om = 1.0 - rho * rho;
        lp += -0.5 * sd1 * sd1 / (priors.sigma_scale * priors.sigma_scale) + log_sd1;
        lp += -0.5 * sd2 * sd2 / (priors.sigma_scale * priors.sigma_scale) + log_sd2;
        lp += std::log(om);  // uniform correlation through the tanh transform
        // Bivariate normal for each level's (intercept, slope) pair.
        const double log_det = 2.0 * (log_sd1 + log_sd2) + std::log(om);
        for (int l = 0; l < term.num_levels(); ++l) {
          const double z1 = u[term.u_index(l, 0)] / sd1;
          const double z2 = u[term.u_index(l, 1)] / sd2;
          const double quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / om;
          lp += -0.5 * (quad + log_det);
        }
      }
    }

    const Eigen::VectorXd eta = design.linear_predictor(beta, u);
    for (std::size_t i = 0; i < design.num_pools(); ++i) {
      lp += pool_eta_loglik(design.link, design.positive[i] != 0, design.sizes[i], eta[i]);
      if (!std::isfinite(lp)) return kNegInf;
    }
    return lp;
  }
};

}  // namespace

FittedModel fit_bayes(const ModelFormula& formula, const PoolDataset& data, const RegressionPriors& priors,
                      const McmcConfig& mcmc_cfg) {
  ModelDesign design = ModelDesign::build(formula, data);
  for (const GroupTerm& term : design.terms) {
    if (term.num_levels() < 2)
      throw std::invalid_argument("grouping factor '" + term.label + "' has fewer than 2 levels");
  }
  const BayesModel model(design, priors);
  const int p = design.fixed.dim();
  const int dim = model.dim();

  // Initialize at (and shape the proposal around) the frequentist fit.
  std::vector<double> init(dim, 0.0);
  std::vector<double> cov(static_cast<std::size_t>(dim) * dim, 0.0);
  auto set_diag = [&](int j, double v) { cov[static_cast<std::size_t>(j) * dim + j] = v; };
  std::vector<std::string> init_warnings;
  try {
    if (design.terms.empty()) {
      const FittedModel glm = fit_glm(formula, data);
      for (int j = 0; j < p; ++j) init[j] = glm.beta[j];
      for (int j = 0; j < p; ++j)
        for (int k = 0; k < p; ++k) cov[static_cast<std::size_t>(j) * dim + k] = glm.beta_cov(j, k);
    } else {
      const FittedModel lap = fit_glmm_laplace(formula, data);
      for (int j = 0; j < p; ++j) init[j] = lap.beta[j];
      for (std::size_t t = 0; t < design.terms.size(); ++t) {
        const int off = p + model.var_offset[t];
        const RandomEffectSummary& s = lap.random_effects[t];
        if (design.terms[t].inner_dim == 1) {
          init[off] = std::log(std::max(s.sd[0], 0.02));
          set_diag(off, 0.04);
        } else {
          init[off] = std::log(std::max(s.sd[0], 0.02));
          init[off + 1] = std::log(std::max(s.sd[1], 0.02));
          init[off + 2] = std::atanh(std::clamp(s.corr, -0.9, 0.9));
          set_diag(off, 0.04);
          set_diag(off + 1, 0.04);
          set_diag(off + 2, 0.04);
        }
      }
      const int u_off = p + model.var_dim;
      for (int j = 0; j < design.u_dim; ++j) init[u_off + j] = lap.u_modes[j];

      // Joint Laplace covariance over (beta, u): proposals must know about
      // the strong anticorrelation between global effects and random-effect
      // sums, or the chains stall.
      {
        const int q = design.u_dim;
        Eigen::Map<const Eigen::VectorXd> beta0(init.data(), p);
        Eigen::Map<const Eigen::VectorXd> u0(init.data() + u_off, q);
        std::vector<double> beta_prec(p);
        for (int j = 0; j < p; ++j) {
          const double sd = j == 0 ? priors.intercept_sd : priors.coef_sd;
          beta_prec[j] = 1.0 / (sd * sd);
        }
        std::vector<std::array<double, 2>> term_sd;
        for (const RandomEffectSummary& s2 : lap.random_effects)
          term_sd.push_back({s2.sd[0], s2.sd.size() > 1 ? s2.sd[1] : 0.0});
        const Eigen::MatrixXd jcov =
            detail::joint_mode_covariance(design, beta0, u0, beta_prec, term_sd);
        auto dst = [&](int a) { return a < p ? a : u_off + (a - p); };
        for (int a = 0; a < p + q; ++a)
          for (int b = 0; b < p + q; ++b)
            cov[static_cast<std::size_t>(dst(a)) * dim + dst(b)] = jcov(a, b);
      }
    }
  } catch (const std::exception& e) {
    // Separation or a failed Laplace fit: fall back to a generic start.
    init.assign(dim, 0.0);
    cov.assign(static_cast<std::size_t>(dim) * dim, 0.0);
    double pos = 0.5, tot = 1.0;
    for (std::size_t i = 0; i < design.num_pools(); ++i) {
      tot += design.sizes[i];
      if (design.positive[i]) pos += design.sizes[i];
    }
    init[0] = link_apply(design.link, std::clamp(pos / tot, 1e-8, 1.0 - 1e-8));
    for (std::size_t t = 0; t < design.terms.size(); ++t) init[p + model.var_offset[t]] = std::log(0.5);
    for (int j = 0; j < dim; ++j) set_diag(j, 0.25);
    init_warnings.push_back(std::string("frequentist initialization failed (") + e.what() +
                            "); started from a neutral point");
  }

  TargetDensity target;
  target.dim = dim;
  target.log_density = [&model](const std::vector<double>& x) { return model.log_posterior(x); };
  for (int j = 0; j < p; ++j) target.parameter_names.push_back(design.fixed.columns[j].name);
  for (std::size_t t = 0; t < design.terms.size(); ++t) {
    const GroupTerm& term = design.terms[t];
    if (term.inner_dim == 1) {
      target.parameter_names.push_back("log_sd[" + term.spec.display + "]");
    } else {
      target.parameter_names.push_back("log_sd1[" + term.spec.display + "]");
      target.parameter_names.push_back("log_sd2[" + term.spec.display + "]");
      target.parameter_names.push_back("atanh_corr[" + term.spec.display + "]");
    }
  }
  for (const GroupTerm& term : design.terms) {
    for (const std::string& key : term.level_keys) {
      target.parameter_names.push_back("u[" + term.label + ":" + key + "]");
      if (term.inner_dim == 2)
        target.parameter_names.push_back("u[" + term.label + ":" + key + ":" + term.spec.slope + "]");
    }
  }

  McmcConfig cfg = mcmc_cfg;
  cfg.initial_proposal_covariance = std::move(cov);
  if (!design.terms.empty()) {
    // Fixed effects and variance parameters form a fast low-dimensional
    // block; the full-vector walk alone drags them badly.
    std::vector<int> hyper_block;
    for (int j = 0; j < p + model.var_dim; ++j) hyper_block.push_back(j);
    cfg.proposal_blocks = {hyper_block};
  }
  const PosteriorDraws draws = sample(target, init, cfg);

  FittedModel fitted;
  fitted.formula = formula;
  fitted.framework = Framework::bayesian;
  fitted.fixed = design.fixed;
  fitted.observed = detail::collect_observed_rows(design, data);
  fitted.groups = detail::strip_pool_vectors(design.terms);
  fitted.draws = draws;
  fitted.seed = cfg.seed;
  for (std::size_t t = 0; t < design.terms.size(); ++t)
    fitted.var_param_offset.push_back(p + model.var_offset[t]);

  fitted.beta.resize(p);
  for (int j = 0; j < p; ++j) fitted.beta[j] = draws.mean(j);

  for (std::size_t t = 0; t < design.terms.size(); ++t) {
    const GroupTerm& term = design.terms[t];
    RandomEffectSummary summary;
    summary.label = term.label;
    summary.group_columns = term.spec.group_columns;
    summary.slope = term.spec.slope;
    summary.level_keys = term.level_keys;
    const int off = fitted.var_param_offset[t];
    const auto posterior_mean_of = [&](int param, auto&& transform) {
      const auto xs = draws.parameter_draws(param);
      double acc = 0.0;
      for (double x : xs) acc += transform(x);
      return acc / static_cast<double>(xs.size());
    };
    if (term.inner_dim == 1) {
      summary.sd = {posterior_mean_of(off, [](double x) { return std::exp(x); })};
    } else {
      summary.sd = {posterior_mean_of(off, [](double x) { return std::exp(x); }),
                    posterior_mean_of(off + 1, [](double x) { return std::exp(x); })};
      summary.corr = posterior_mean_of(off + 2, [](double x) { return std::tanh(x); });
    }
    fitted.random_effects.push_back(std::move(summary));
  }

  fitted.meta.max_rhat = draws.max_rhat();
  fitted.meta.min_ess = draws.min_ess();
  fitted.meta.warnings = init_warnings;
  for (const std::string& w : draws.warnings) fitted.meta.warnings.push_back(w);
  if (fitted.meta.max_rhat > 1.05)
    fitted.meta.warnings.push_back("max split R-hat " + std::to_string(fitted.meta.max_rhat) +
                                   " exceeds 1.05; consider more iterations");
  if (fitted.meta.min_ess < 100.0)
    fitted.meta.warnings.push_back("min bulk ESS " + std::to_string(fitted.meta.min_ess) + " is below 100");
  fitted.meta.iterations = cfg.sampling_iters;
  return fitted;
}

}  // namespace pooltest
