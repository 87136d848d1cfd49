#include <algorithm>
#include <cmath>
#include <numeric>

#include "fit_common.hpp"
#include "pooltest/model_core.hpp"
#include "pooltest/rng.hpp"
#include "pooltest/special.hpp"

namespace pooltest {

namespace {

constexpr int kMarginalReplicates = 64;

struct DrawView {
  const PosteriorDraws& draws;
  int flat_index;  // chain-major stored draw index

  double param(int j) const {
    const int iters = draws.iters_per_chain;
    return draws.value(flat_index / iters, flat_index % iters, j);
  }
};

// Per-draw covariance factors of one term: fresh effects are sd * z for
// intercept terms and a 2x2 Cholesky draw for intercept-slope blocks.
struct TermScale {
  double sd1 = 0.0, sd2 = 0.0, rho = 0.0;
};

TermScale term_scale(const FittedModel& model, std::size_t t, const DrawView& view) {
  const int off = model.var_param_offset[t];
  TermScale s;
  s.sd1 = std::exp(view.param(off));
  if (model.groups[t].inner_dim == 2) {
    s.sd2 = std::exp(view.param(off + 1));
    s.rho = std::tanh(view.param(off + 2));
  }
  return s;
}

// Frequentist variance parameters from the stored log-Cholesky theta.
TermScale term_scale_freq(const FittedModel& model, std::size_t t) {
  int off = 0;
  for (std::size_t k = 0; k < t; ++k) off += detail::var_params_for(model.groups[k]);
  TermScale s;
  if (model.groups[t].inner_dim == 1) {
    s.sd1 = std::exp(model.theta[off]);
  } else {
    const double l11 = std::exp(model.theta[off]);
    const double l22 = std::exp(model.theta[off + 1]);
    const double l21 = model.theta[off + 2];
    s.sd1 = l11;
    s.sd2 = std::hypot(l21, l22);
    s.rho = s.sd2 > 0.0 ? l21 / s.sd2 : 0.0;
  }
  return s;
}

struct TableRow {
  std::vector<Value> values;
  Eigen::VectorXd x;
  std::vector<int> term_levels;  // -1 for levels beyond the table depth
  std::vector<double> term_slopes;
};

double slope_value_for(const FittedModel& model, std::size_t t, const std::map<std::string, Value>& values) {
  const GroupTerm& term = model.groups[t];
  if (term.inner_dim == 1) return 0.0;
  auto it = values.find(term.spec.slope);
  if (it == values.end()) throw DataError("missing covariate '" + term.spec.slope + "'");
  return value_as_number(it->second);
}

PrevalenceTable predict_table(const FittedModel& model, const std::string& name,
                              const std::vector<std::string>& columns, std::vector<TableRow> rows,
                              std::size_t depth, double level) {
  PrevalenceTable table;
  table.name = name;
  table.columns = columns;
  table.bayesian = model.framework == Framework::bayesian;
  table.level = level;
  const Link link = model.formula.link;

  if (model.framework == Framework::frequentist) {
    const double z = normal_quantile(0.5 + level / 2.0);
    for (TableRow& row : rows) {
      double eta = row.x.dot(model.beta);
      double var = row.x.dot(model.beta_cov * row.x);
      for (std::size_t t = 0; t < depth && t < model.groups.size(); ++t) {
        const GroupTerm& term = model.groups[t];
        const int l = row.term_levels[t];
        if (l < 0) continue;
        const int j0 = term.u_index(l, 0);
        eta += model.u_modes[j0];
        var += model.u_cov(j0, j0);
        if (term.inner_dim == 2) {
          const int j1 = term.u_index(l, 1);
          const double s = row.term_slopes[t];
          eta += model.u_modes[j1] * s;
          var += s * s * model.u_cov(j1, j1) + 2.0 * s * model.u_cov(j0, j1);
        }
      }
      const double se = std::sqrt(std::max(var, 0.0));
      table.rows.push_back({std::move(row.values), link_inverse(link, eta),
                            link_inverse(link, eta - z * se), link_inverse(link, eta + z * se)});
    }
    return table;
  }

  // Bayesian: per draw, condition on the row's group levels up to `depth`
  // and marginalize the deeper terms with fresh standard-normal draws.
  const int total_draws = model.draws.num_chains * model.draws.iters_per_chain;
  const int u_off = model.u_offset();
  std::vector<double> p_draws(total_draws);
  const double tail = 1.0 - level;
  const bool any_marginal = depth < model.groups.size();
  for (TableRow& row : rows) {
    for (int k = 0; k < total_draws; ++k) {
      const DrawView view{model.draws, k};
      double eta = 0.0;
      for (int j = 0; j < model.num_fixed(); ++j) eta += row.x[j] * view.param(j);
      int u_cursor = u_off;
      for (std::size_t t = 0; t < model.groups.size(); ++t) {
        const GroupTerm& term = model.groups[t];
        if (t < depth && row.term_levels[t] >= 0) {
          const int base = u_cursor + row.term_levels[t] * term.inner_dim;
          eta += view.param(base);
          if (term.inner_dim == 2) eta += view.param(base + 1) * row.term_slopes[t];
        }
        u_cursor += term.inner_dim * term.num_levels();
      }
      if (!any_marginal) {
        p_draws[k] = link_inverse(link, eta);
        continue;
      }
      Rng zrng(derive_seed(model.seed, {0x6D47ULL, static_cast<std::uint64_t>(k)}));
      double acc = 0.0;
      for (int r = 0; r < kMarginalReplicates; ++r) {
        double extra = 0.0;
        for (std::size_t t = depth; t < model.groups.size(); ++t) {
          const TermScale s = term_scale(model, t, view);
          const double z1 = zrng.normal();
          extra += s.sd1 * z1;
          if (model.groups[t].inner_dim == 2) {
            const double z2 = zrng.normal();
            const double slope_effect = s.sd2 * (s.rho * z1 + std::sqrt(1.0 - s.rho * s.rho) * z2);
            extra += slope_effect * row.term_slopes[t];
          }
        }
        acc += link_inverse(link, eta + extra);
      }
      p_draws[k] = acc / kMarginalReplicates;
    }
    std::vector<double> sorted = p_draws;
    std::sort(sorted.begin(), sorted.end());
    const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / sorted.size();
    table.rows.push_back({std::move(row.values), mean, quantile_sorted(sorted, tail / 2.0),
                          quantile_sorted(sorted, 1.0 - tail / 2.0)});
  }
  return table;
}

std::vector<TableRow> rows_for_depth(const FittedModel& model, const std::vector<std::string>& columns,
                                     std::size_t depth) {
  struct Less {
    bool operator()(const std::vector<Value>& a, const std::vector<Value>& b) const {
      for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        const int c = compare_values(a[i], b[i]);
        if (c != 0) return c < 0;
      }
      return a.size() < b.size();
    }
  };
  std::map<std::vector<Value>, TableRow, Less> unique;
  for (const ObservedRow& obs : model.observed) {
    std::vector<Value> key;
    key.reserve(columns.size());
    for (const std::string& col : columns) key.push_back(obs.values.at(col));
    if (unique.count(key)) continue;
    TableRow row;
    row.values = key;
    row.x = model.fixed.row(obs.values);
    row.term_levels.assign(model.groups.size(), -1);
    row.term_slopes.assign(model.groups.size(), 0.0);
    for (std::size_t t = 0; t < depth && t < model.groups.size(); ++t) {
      row.term_levels[t] = obs.term_levels[t];
      row.term_slopes[t] = slope_value_for(model, t, obs.values);
    }
    unique.emplace(std::move(key), std::move(row));
  }
  std::vector<TableRow> rows;
  rows.reserve(unique.size());
  for (auto& [key, row] : unique) rows.push_back(std::move(row));
  return rows;
}

}  // namespace

std::vector<PrevalenceTable> get_prevalence(
    const FittedModel& model, const std::optional<std::vector<std::map<std::string, Value>>>& newdata,
    double level) {
  if (!(level > 0.0) || !(level < 1.0)) throw std::invalid_argument("interval level must be in (0,1)");

  if (newdata.has_value()) {
    // Prediction for new covariate rows: population level only, in the
    // caller's row order. Extrapolation is allowed silently.
    std::vector<TableRow> rows;
    rows.reserve(newdata->size());
    for (const auto& values : *newdata) {
      TableRow row;
      row.x = model.fixed.row(values);
      row.term_levels.assign(model.groups.size(), -1);
      row.term_slopes.assign(model.groups.size(), 0.0);
      for (std::size_t t = 0; t < model.groups.size(); ++t) {
        if (model.groups[t].inner_dim == 2) row.term_slopes[t] = slope_value_for(model, t, values);
      }
      for (const std::string& col : model.fixed.terms) row.values.push_back(values.at(col));
      rows.push_back(std::move(row));
    }
    return {predict_table(model, "PopulationEffects", model.fixed.terms, std::move(rows), 0, level)};
  }

  std::vector<PrevalenceTable> tables;
  for (std::size_t depth = 0; depth <= model.groups.size(); ++depth) {
    const std::vector<std::string> columns = detail::table_columns(model, depth);
    const std::string name = depth == 0 ? "PopulationEffects" : model.groups[depth - 1].label;
    tables.push_back(
        predict_table(model, name, columns, rows_for_depth(model, columns, depth), depth, level));
  }
  return tables;
}

}  // namespace pooltest
