#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>

#include "fit_common.hpp"
#include "pooltest/model_core.hpp"

namespace pooltest {

namespace detail {

GlmObjective glm_objective(const Eigen::MatrixXd& X, const std::vector<int>& sizes,
                           const std::vector<char>& positive, Link link, const Eigen::VectorXd& beta,
                           const Eigen::VectorXd& offset, bool with_derivatives) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  GlmObjective out;
  if (with_derivatives) {
    out.grad = Eigen::VectorXd::Zero(p);
    out.neg_hessian = Eigen::MatrixXd::Zero(p, p);
  }
  Eigen::VectorXd eta = X * beta;
  if (offset.size() == n) eta += offset;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!with_derivatives) {
      out.ll += pool_eta_loglik(link, positive[i] != 0, sizes[i], eta[i]);
      continue;
    }
    const EtaDerivatives d = pool_eta_derivatives(link, positive[i] != 0, sizes[i], eta[i]);
    out.ll += d.ll;
    out.grad += d.d1 * X.row(i).transpose();
    out.neg_hessian += (-d.d2) * (X.row(i).transpose() * X.row(i));
  }
  return out;
}

namespace {

void check_rank(const Eigen::MatrixXd& X, const std::vector<FixedSpec::Column>& columns) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() == X.cols()) return;
  const auto& perm = qr.colsPermutation().indices();
  std::string names;
  for (Eigen::Index k = qr.rank(); k < X.cols(); ++k) {
    if (!names.empty()) names += ", ";
    names += columns[perm[k]].name;
  }
  throw NumericError("design matrix is rank deficient; collinear columns: " + names);
}

}  // namespace

NewtonResult newton_glm(const Eigen::MatrixXd& X, const std::vector<int>& sizes,
                        const std::vector<char>& positive, Link link, const Eigen::VectorXd& offset,
                        const std::vector<FixedSpec::Column>& columns) {
  check_rank(X, columns);
  const Eigen::Index p = X.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  // Start the intercept at the link of a crude individual-level rate.
  {
    double pos = 0.0, tot = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      tot += sizes[i];
      if (positive[i]) pos += sizes[i];
    }
    const double rate = std::clamp((pos + 0.5) / (tot + 1.0), 1e-8, 1.0 - 1e-8);
    beta[0] = link_apply(link, rate);
    if (offset.size() == X.rows()) beta[0] -= offset.mean();
  }

  GlmObjective cur = glm_objective(X, sizes, positive, link, beta, offset, true);
  constexpr int kMaxIter = 100;
  for (int it = 1; it <= kMaxIter; ++it) {
    if (cur.grad.lpNorm<Eigen::Infinity>() < 1e-8) {
      NewtonResult res;
      res.beta = beta;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.neg_hessian);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw NumericError("observed information is not positive definite at the optimum");
      res.cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
      res.log_likelihood = cur.ll;
      res.iterations = it - 1;
      return res;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.neg_hessian);
    Eigen::VectorXd step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      step = ldlt.solve(cur.grad);
    } else {
      Eigen::MatrixXd h = cur.neg_hessian;
      h.diagonal().array() += 1e-6 * std::max(1.0, h.trace() / p);
      step = h.ldlt().solve(cur.grad);
    }
    // Inside the quadratic-convergence region the predicted gain drops
    // below floating-point noise; take the raw Newton step there.
    const double predicted_gain = 0.5 * cur.grad.dot(step);
    if (predicted_gain < 1e-9 * std::max(1.0, std::fabs(cur.ll))) {
      const GlmObjective next = glm_objective(X, sizes, positive, link, beta + step, offset, true);
      if (std::isfinite(next.ll)) {
        beta += step;
        cur = next;
        continue;
      }
    }
    double scale = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      const Eigen::VectorXd cand = beta + scale * step;
      const GlmObjective next = glm_objective(X, sizes, positive, link, cand, offset, true);
      if (std::isfinite(next.ll) && next.ll > cur.ll - 1e-14 * std::fabs(cur.ll)) {
        beta = cand;
        cur = next;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
  }
  if (cur.grad.lpNorm<Eigen::Infinity>() < 1e-8) {
    NewtonResult res;
    res.beta = beta;
    res.cov = cur.neg_hessian.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    res.log_likelihood = cur.ll;
    res.iterations = kMaxIter;
    return res;
  }
  throw NumericError("GLM failed to converge after 100 iterations (gradient norm " +
                     std::to_string(cur.grad.lpNorm<Eigen::Infinity>()) +
                     "); the data may be separated");
}

std::vector<ObservedRow> collect_observed_rows(const ModelDesign& design, const PoolDataset& data) {
  // Columns a prediction row can reference.
  std::vector<std::string> needed = design.fixed.terms;
  for (const GroupTerm& term : design.terms) {
    for (const std::string& col : term.spec.group_columns) {
      if (std::find(needed.begin(), needed.end(), col) == needed.end()) needed.push_back(col);
    }
    if (!term.spec.slope.empty() &&
        std::find(needed.begin(), needed.end(), term.spec.slope) == needed.end())
      needed.push_back(term.spec.slope);
  }

  std::map<std::string, ObservedRow> unique;
  const auto& pools = data.pools();
  for (std::size_t i = 0; i < pools.size(); ++i) {
    ObservedRow row;
    std::string key;
    for (const std::string& col : needed) {
      const Value& v = data.value(pools[i], col);
      row.values[col] = v;
      key += format_value(v);
      key += '\x1f';
    }
    for (const GroupTerm& term : design.terms) row.term_levels.push_back(term.level_of_pool[i]);
    unique.emplace(std::move(key), std::move(row));
  }
  std::vector<ObservedRow> out;
  out.reserve(unique.size());
  for (auto& [key, row] : unique) out.push_back(std::move(row));
  return out;
}

int var_params_for(const GroupTerm& term) { return term.inner_dim == 1 ? 1 : 3; }

Eigen::MatrixXd joint_mode_covariance(const ModelDesign& design, const Eigen::VectorXd& beta,
                                      const Eigen::VectorXd& u,
                                      const std::vector<double>& beta_prior_precision,
                                      const std::vector<std::array<double, 2>>& term_sd) {
  const int p = design.fixed.dim();
  const int q = design.u_dim;
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(p + q, p + q);
  const Eigen::VectorXd eta = design.linear_predictor(beta, u);
  std::vector<int> idx(p + 2 * design.terms.size());
  std::vector<double> val(idx.size());
  for (std::size_t i = 0; i < design.num_pools(); ++i) {
    const EtaDerivatives d =
        pool_eta_derivatives(design.link, design.positive[i] != 0, design.sizes[i], eta[i]);
    int nz = 0;
    for (int j = 0; j < p; ++j) {
      idx[nz] = j;
      val[nz++] = design.X(static_cast<Eigen::Index>(i), j);
    }
    for (std::size_t t = 0; t < design.terms.size(); ++t) {
      const GroupTerm& term = design.terms[t];
      const int level = term.level_of_pool[i];
      idx[nz] = p + term.u_index(level, 0);
      val[nz++] = 1.0;
      if (term.inner_dim == 2) {
        idx[nz] = p + term.u_index(level, 1);
        val[nz++] = term.slope_of_pool[i];
      }
    }
    for (int a = 0; a < nz; ++a)
      for (int b = 0; b < nz; ++b) joint(idx[a], idx[b]) -= d.d2 * val[a] * val[b];
  }
  for (int j = 0; j < p; ++j) joint(j, j) += beta_prior_precision[j];
  for (std::size_t t = 0; t < design.terms.size(); ++t) {
    const GroupTerm& term = design.terms[t];
    const double var1 = std::max(term_sd[t][0] * term_sd[t][0], 1e-4);
    const double var2 = std::max(term_sd[t][1] * term_sd[t][1], 1e-4);
    for (int l = 0; l < term.num_levels(); ++l) {
      joint(p + term.u_index(l, 0), p + term.u_index(l, 0)) += 1.0 / var1;
      if (term.inner_dim == 2) joint(p + term.u_index(l, 1), p + term.u_index(l, 1)) += 1.0 / var2;
    }
  }
  joint.diagonal().array() += 1e-10 * std::max(1.0, joint.trace() / (p + q));
  return joint.llt().solve(Eigen::MatrixXd::Identity(p + q, p + q));
}

std::vector<GroupTerm> strip_pool_vectors(const std::vector<GroupTerm>& terms) {
  std::vector<GroupTerm> out = terms;
  for (GroupTerm& term : out) {
    term.level_of_pool.clear();
    term.level_of_pool.shrink_to_fit();
    term.slope_of_pool.clear();
    term.slope_of_pool.shrink_to_fit();
  }
  return out;
}

std::vector<std::string> table_columns(const FittedModel& model, std::size_t k) {
  std::vector<std::string> cols = model.fixed.terms;
  for (std::size_t t = 0; t < k && t < model.groups.size(); ++t) {
    for (const std::string& col : model.groups[t].spec.group_columns) {
      if (std::find(cols.begin(), cols.end(), col) == cols.end()) cols.push_back(col);
    }
  }
  return cols;
}

}  // namespace detail

int FittedModel::num_var_params() const {
  int k = 0;
  for (const GroupTerm& term : groups) k += detail::var_params_for(term);
  return k;
}

namespace {

FittedModel make_glm_model(const ModelFormula& formula, const PoolDataset& data, ModelDesign design,
                           detail::NewtonResult fit) {
  FittedModel model;
  model.formula = formula;
  model.framework = Framework::frequentist;
  model.fixed = design.fixed;
  model.observed = detail::collect_observed_rows(design, data);
  model.groups = detail::strip_pool_vectors(design.terms);
  model.beta = std::move(fit.beta);
  model.beta_cov = std::move(fit.cov);
  model.meta.log_likelihood = fit.log_likelihood;
  model.meta.iterations = fit.iterations;
  return model;
}

}  // namespace

FittedModel fit_glm(const ModelFormula& formula, const PoolDataset& data) {
  if (!formula.random_terms.empty())
    throw std::invalid_argument("fit_glm does not accept random-effect terms; use fit_glmm_laplace");
  ModelDesign design = ModelDesign::build(formula, data);
  detail::NewtonResult fit = detail::newton_glm(design.X, design.sizes, design.positive, design.link,
                                                Eigen::VectorXd(), design.fixed.columns);
  return make_glm_model(formula, data, std::move(design), std::move(fit));
}

FittedModel fit_glm_offset_bernoulli(const ModelFormula& formula, const PoolDataset& data) {
  if (!formula.random_terms.empty())
    throw std::invalid_argument("the offset route is a fixed-effects cross-check");
  if (formula.link != Link::cloglog)
    throw std::invalid_argument("the offset-Bernoulli equivalence holds for the cloglog link only");
  ModelDesign design = ModelDesign::build(formula, data);
  const Eigen::Index n = design.X.rows();
  Eigen::VectorXd offset(n);
  std::vector<int> ones(design.sizes.size(), 1);
  for (Eigen::Index i = 0; i < n; ++i) offset[i] = std::log(static_cast<double>(design.sizes[i]));
  detail::NewtonResult fit =
      detail::newton_glm(design.X, ones, design.positive, Link::cloglog, offset, design.fixed.columns);
  return make_glm_model(formula, data, std::move(design), std::move(fit));
}

}  // namespace pooltest
