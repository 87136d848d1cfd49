#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

#include "fit_common.hpp"
#include "pooltest/model_core.hpp"

namespace pooltest {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMinLogSd = -18.4207;  // log(1e-8)

// Per-level precision and log-determinant of one term's covariance block.
struct TermPrecision {
  Eigen::Matrix2d precision;  // top-left entry used when inner_dim == 1
  double log_det = 0.0;       // log det of the covariance block
};

TermPrecision term_precision(const GroupTerm& term, const double* theta) {
  TermPrecision out;
  if (term.inner_dim == 1) {
    const double log_sd = std::max(theta[0], kMinLogSd);
    out.precision(0, 0) = std::exp(-2.0 * log_sd);
    out.log_det = 2.0 * log_sd;
    return out;
  }
  const double l11 = std::exp(std::max(theta[0], kMinLogSd));
  const double l22 = std::exp(std::max(theta[1], kMinLogSd));
  const double l21 = theta[2];
  // Sigma = L L^T with L = [[l11, 0], [l21, l22]].
  Eigen::Matrix2d linv;
  linv << 1.0 / l11, 0.0, -l21 / (l11 * l22), 1.0 / l22;
  out.precision = linv.transpose() * linv;
  out.log_det = 2.0 * (std::log(l11) + std::log(l22));
  return out;
}

struct LaplaceObjective {
  const ModelDesign& design;
  std::vector<int> theta_offset;
  int theta_dim = 0;

  // Warm start for the inner Newton iteration.
  mutable Eigen::VectorXd u_cache;

  explicit LaplaceObjective(const ModelDesign& d) : design(d) {
    for (const GroupTerm& term : d.terms) {
      theta_offset.push_back(theta_dim);
      theta_dim += detail::var_params_for(term);
    }
    u_cache = Eigen::VectorXd::Zero(d.u_dim);
  }

  double joint_value(const Eigen::VectorXd& beta, const std::vector<TermPrecision>& prec,
                     const Eigen::VectorXd& u) const {
    const Eigen::VectorXd eta = design.linear_predictor(beta, u);
    double ll = 0.0;
    for (std::size_t i = 0; i < design.num_pools(); ++i) {
      ll += pool_eta_loglik(design.link, design.positive[i] != 0, design.sizes[i], eta[i]);
      if (!std::isfinite(ll)) return kNegInf;
    }
    for (std::size_t t = 0; t < design.terms.size(); ++t) {
      const GroupTerm& term = design.terms[t];
      for (int l = 0; l < term.num_levels(); ++l) {
        if (term.inner_dim == 1) {
          const double v = u[term.u_index(l)];
          ll -= 0.5 * prec[t].precision(0, 0) * v * v;
        } else {
          const Eigen::Vector2d v(u[term.u_index(l, 0)], u[term.u_index(l, 1)]);
          ll -= 0.5 * v.dot(prec[t].precision * v);
        }
      }
    }
    return ll;
  }

  // Maximize the joint over u at fixed (beta, theta). Returns the mode, the
  // Cholesky of the negative Hessian and the joint value there.
  struct InnerResult {
    Eigen::VectorXd u;
    Eigen::LLT<Eigen::MatrixXd> chol;
    double joint = kNegInf;
    bool converged = false;
  };

  InnerResult inner_maximize(const Eigen::VectorXd& beta, const double* theta) const {
    InnerResult out = inner_from(beta, theta, u_cache);
    if (!out.converged) out = inner_from(beta, theta, Eigen::VectorXd::Zero(design.u_dim));
    if (out.converged) u_cache = out.u;
    return out;
  }

  InnerResult inner_from(const Eigen::VectorXd& beta, const double* theta,
                         const Eigen::VectorXd& u_start) const {
    std::vector<TermPrecision> prec;
    prec.reserve(design.terms.size());
    for (std::size_t t = 0; t < design.terms.size(); ++t)
      prec.push_back(term_precision(design.terms[t], theta + theta_offset[t]));

    const int q = design.u_dim;
    Eigen::VectorXd u = u_start;
    double value = joint_value(beta, prec, u);
    if (!std::isfinite(value)) {
      u.setZero();
      value = joint_value(beta, prec, u);
    }

    InnerResult out;
    Eigen::VectorXd grad(q);
    Eigen::MatrixXd hess(q, q);
    for (int it = 0; it < 100; ++it) {
      // Gradient and negative Hessian of the joint in u.
      grad.setZero();
      hess.setZero();
      const Eigen::VectorXd eta = design.linear_predictor(beta, u);
      for (std::size_t i = 0; i < design.num_pools(); ++i) {
        const EtaDerivatives d =
            pool_eta_derivatives(design.link, design.positive[i] != 0, design.sizes[i], eta[i]);
        int idx[4];
        double val[4];
        int nz = 0;
        for (std::size_t t = 0; t < design.terms.size(); ++t) {
          const GroupTerm& term = design.terms[t];
          const int level = term.level_of_pool[i];
          idx[nz] = term.u_index(level, 0);
          val[nz++] = 1.0;
          if (term.inner_dim == 2) {
            idx[nz] = term.u_index(level, 1);
            val[nz++] = term.slope_of_pool[i];
          }
        }
        for (int a = 0; a < nz; ++a) {
          grad[idx[a]] += d.d1 * val[a];
          for (int b = 0; b < nz; ++b) hess(idx[a], idx[b]) -= d.d2 * val[a] * val[b];
        }
      }
      for (std::size_t t = 0; t < design.terms.size(); ++t) {
        const GroupTerm& term = design.terms[t];
        for (int l = 0; l < term.num_levels(); ++l) {
          if (term.inner_dim == 1) {
            const int j = term.u_index(l);
            grad[j] -= prec[t].precision(0, 0) * u[j];
            hess(j, j) += prec[t].precision(0, 0);
          } else {
            const int j0 = term.u_index(l, 0), j1 = term.u_index(l, 1);
            const Eigen::Vector2d v(u[j0], u[j1]);
            const Eigen::Vector2d pv = prec[t].precision * v;
            grad[j0] -= pv[0];
            grad[j1] -= pv[1];
            hess(j0, j0) += prec[t].precision(0, 0);
            hess(j0, j1) += prec[t].precision(0, 1);
            hess(j1, j0) += prec[t].precision(1, 0);
            hess(j1, j1) += prec[t].precision(1, 1);
          }
        }
      }

      out.chol.compute(hess);
      if (out.chol.info() != Eigen::Success) {
        Eigen::MatrixXd ridged = hess;
        ridged.diagonal().array() += 1e-8 * std::max(1.0, hess.trace() / q);
        out.chol.compute(ridged);
        if (out.chol.info() != Eigen::Success) break;
      }
      if (grad.lpNorm<Eigen::Infinity>() < 1e-8) {
        out.converged = true;
        break;
      }
      const Eigen::VectorXd step = out.chol.solve(grad);
      double scale = 1.0;
      bool improved = false;
      for (int half = 0; half < 40; ++half) {
        const Eigen::VectorXd cand = u + scale * step;
        const double cand_value = joint_value(beta, prec, cand);
        if (std::isfinite(cand_value) && cand_value >= value - 1e-12 * std::fabs(value)) {
          u = cand;
          value = cand_value;
          improved = true;
          break;
        }
        scale *= 0.5;
      }
      if (!improved) break;
    }
    out.u = u;
    out.joint = value;
    return out;
  }

  // Negative Laplace-approximate marginal log-likelihood of x = [beta; theta].
  double operator()(const Eigen::VectorXd& x) const {
    const int p = design.fixed.dim();
    const Eigen::VectorXd beta = x.head(p);
    const InnerResult inner = inner_maximize(beta, x.data() + p);
    if (!std::isfinite(inner.joint) || !inner.converged) return 1e100;

    double log_det_sigma = 0.0;
    for (std::size_t t = 0; t < design.terms.size(); ++t) {
      const TermPrecision prec = term_precision(design.terms[t], x.data() + p + theta_offset[t]);
      log_det_sigma += design.terms[t].num_levels() * prec.log_det;
    }
    double log_det_h = 0.0;
    const auto& l = inner.chol.matrixLLT();
    for (int j = 0; j < design.u_dim; ++j) log_det_h += 2.0 * std::log(l(j, j));

    const double marginal = inner.joint - 0.5 * log_det_sigma - 0.5 * log_det_h;
    return -marginal;
  }
};

// Plain BFGS with backtracking line search and numeric central gradients.
struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

template <typename F>
Eigen::VectorXd numeric_gradient(const F& f, const Eigen::VectorXd& x, double base) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd g(n);
  Eigen::VectorXd xp = x;
  for (int j = 0; j < n; ++j) {
    const double h = 1e-5 * std::max(1.0, std::fabs(x[j]));
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
    (void)base;
  }
  return g;
}

template <typename F>
BfgsResult bfgs_minimize(const F& f, Eigen::VectorXd x, int max_iter, double grad_tol) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  double value = f(x);
  Eigen::VectorXd grad = numeric_gradient(f, x, value);

  BfgsResult out;
  for (int it = 0; it < max_iter; ++it) {
    if (grad.lpNorm<Eigen::Infinity>() < grad_tol) {
      out.converged = true;
      out.iterations = it;
      break;
    }
    Eigen::VectorXd dir = -h_inv * grad;
    if (dir.dot(grad) >= 0.0) dir = -grad;  // reset on loss of descent

    double step = 1.0;
    double new_value = value;
    Eigen::VectorXd xn = x;
    bool improved = false;
    const double slope = grad.dot(dir);
    for (int half = 0; half < 50; ++half) {
      xn = x + step * dir;
      new_value = f(xn);
      if (std::isfinite(new_value) && new_value <= value + 1e-4 * step * slope) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      if (std::getenv("POOLTEST_DEBUG_BFGS"))
        std::fprintf(stderr, "bfgs stall it=%d value=%.8f |g|=%.3e slope=%.3e\n", it, value,
                     grad.lpNorm<Eigen::Infinity>(), slope);
      out.iterations = it;
      out.converged = grad.lpNorm<Eigen::Infinity>() < 100.0 * grad_tol;
      break;
    }
    if (std::getenv("POOLTEST_DEBUG_BFGS"))
      std::fprintf(stderr, "bfgs it=%d value=%.8f |g|=%.3e step=%.3e\n", it, new_value,
                   grad.lpNorm<Eigen::Infinity>(), step);
    const Eigen::VectorXd new_grad = numeric_gradient(f, xn, new_value);
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = new_grad - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const Eigen::VectorXd hy = h_inv * y;
      const double yhy = y.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    x = xn;
    value = new_value;
    grad = new_grad;
    out.iterations = it + 1;
  }
  out.x = x;
  out.value = value;
  if (out.iterations == max_iter) out.converged = grad.lpNorm<Eigen::Infinity>() < grad_tol;
  return out;
}

}  // namespace

FittedModel fit_glmm_laplace(const ModelFormula& formula, const PoolDataset& data) {
  if (formula.random_terms.empty())
    throw std::invalid_argument("fit_glmm_laplace requires at least one random-effect term");
  ModelDesign design = ModelDesign::build(formula, data);
  for (const GroupTerm& term : design.terms) {
    if (term.num_levels() < 2)
      throw std::invalid_argument("grouping factor '" + term.label + "' has fewer than 2 levels");
  }

  const int p = design.fixed.dim();
  LaplaceObjective objective(design);
  const int dim = p + objective.theta_dim;

  // Initialize beta from the fixed-effects fit and all SDs at 0.3.
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(dim);
  {
    ModelFormula fixed_only = formula;
    fixed_only.random_terms.clear();
    const FittedModel glm = fit_glm(fixed_only, data);
    x0.head(p) = glm.beta;
  }
  for (std::size_t t = 0; t < design.terms.size(); ++t) {
    const int off = p + objective.theta_offset[t];
    x0[off] = std::log(0.3);
    if (design.terms[t].inner_dim == 2) {
      x0[off + 1] = std::log(0.3);
      x0[off + 2] = 0.0;
    }
  }

  const BfgsResult opt = bfgs_minimize(objective, x0, 200, 1e-6);
  if (!opt.converged)
    throw NumericError("GLMM fit did not converge after 200 outer iterations");

  FittedModel model;
  model.formula = formula;
  model.framework = Framework::frequentist;
  model.fixed = design.fixed;
  model.observed = detail::collect_observed_rows(design, data);
  model.groups = detail::strip_pool_vectors(design.terms);
  model.beta = opt.x.head(p);
  model.theta.assign(opt.x.data() + p, opt.x.data() + dim);
  model.meta.log_likelihood = -opt.value;
  model.meta.iterations = opt.iterations;

  // Conditional modes and covariance at the optimum.
  {
    const LaplaceObjective::InnerResult inner = objective.inner_maximize(model.beta, opt.x.data() + p);
    model.u_modes = inner.u;
    model.u_cov =
        inner.chol.solve(Eigen::MatrixXd::Identity(design.u_dim, design.u_dim));
  }

  // Wald covariance for beta from the outer Hessian (numeric, central).
  {
    Eigen::MatrixXd hess(dim, dim);
    Eigen::VectorXd xp = opt.x;
    std::vector<double> h(dim);
    for (int j = 0; j < dim; ++j) h[j] = 1e-4 * std::max(1.0, std::fabs(opt.x[j]));
    const double f0 = opt.value;
    std::vector<double> fplus(dim), fminus(dim);
    for (int j = 0; j < dim; ++j) {
      xp[j] = opt.x[j] + h[j];
      fplus[j] = objective(xp);
      xp[j] = opt.x[j] - h[j];
      fminus[j] = objective(xp);
      xp[j] = opt.x[j];
      hess(j, j) = (fplus[j] - 2.0 * f0 + fminus[j]) / (h[j] * h[j]);
    }
    for (int j = 0; j < dim; ++j) {
      for (int k = j + 1; k < dim; ++k) {
        xp[j] = opt.x[j] + h[j];
        xp[k] = opt.x[k] + h[k];
        const double fpp = objective(xp);
        xp[k] = opt.x[k] - h[k];
        const double fpm = objective(xp);
        xp[j] = opt.x[j] - h[j];
        const double fmm = objective(xp);
        xp[k] = opt.x[k] + h[k];
        const double fmp = objective(xp);
        xp[j] = opt.x[j];
        xp[k] = opt.x[k];
        hess(j, k) = hess(k, j) = (fpp - fpm - fmp + fmm) / (4.0 * h[j] * h[k]);
      }
    }
    Eigen::LDLT<Eigen::MatrixXd> full(hess);
    bool ok = full.info() == Eigen::Success && full.isPositive();
    if (ok) {
      const Eigen::MatrixXd cov = full.solve(Eigen::MatrixXd::Identity(dim, dim));
      model.beta_cov = cov.topLeftCorner(p, p);
      ok = model.beta_cov.allFinite() && (model.beta_cov.diagonal().array() > 0.0).all();
    }
    if (!ok) {
      // Variance parameters at a boundary make the full Hessian singular;
      // fall back to the beta block with theta held fixed.
      Eigen::LDLT<Eigen::MatrixXd> bb(hess.topLeftCorner(p, p));
      model.beta_cov = bb.solve(Eigen::MatrixXd::Identity(p, p));
      model.meta.warnings.push_back("beta covariance conditioned on the variance parameters");
    }
  }

  for (std::size_t t = 0; t < design.terms.size(); ++t) {
    const GroupTerm& term = design.terms[t];
    RandomEffectSummary summary;
    summary.label = term.label;
    summary.group_columns = term.spec.group_columns;
    summary.slope = term.spec.slope;
    summary.level_keys = term.level_keys;
    const double* theta = model.theta.data() + objective.theta_offset[t];
    if (term.inner_dim == 1) {
      summary.sd = {std::exp(theta[0])};
    } else {
      const double l11 = std::exp(theta[0]);
      const double l22 = std::exp(theta[1]);
      const double l21 = theta[2];
      const double sd2 = std::hypot(l21, l22);
      summary.sd = {l11, sd2};
      summary.corr = sd2 > 0.0 ? l21 / sd2 : 0.0;
    }
    for (double sd : summary.sd) {
      if (sd < 1e-6)
        model.meta.warnings.push_back("variance of '" + term.label + "' collapsed to the boundary (sd " +
                                      std::to_string(sd) + ")");
    }
    model.random_effects.push_back(std::move(summary));
  }
  return model;
}

}  // namespace pooltest
