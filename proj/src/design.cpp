#include "pooltest/design.hpp"

#include <algorithm>
#include <set>

namespace pooltest {

Eigen::VectorXd FixedSpec::row(const std::map<std::string, Value>& values) const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim());
  x[0] = 1.0;
  for (int j = 1; j < dim(); ++j) {
    const Column& col = columns[j];
    auto it = values.find(col.term);
    if (it == values.end()) throw DataError("missing covariate '" + col.term + "'");
    if (col.level.empty()) {
      x[j] = value_as_number(it->second);
    } else {
      const std::string v = format_value(it->second);
      const auto& levels = categorical_levels.at(col.term);
      if (std::find(levels.begin(), levels.end(), v) == levels.end())
        throw DataError("unseen level '" + v + "' for covariate '" + col.term + "'");
      x[j] = v == col.level ? 1.0 : 0.0;
    }
  }
  return x;
}

std::string GroupTerm::key_for(const std::map<std::string, Value>& values) const {
  std::string key;
  for (const std::string& col : spec.group_columns) {
    auto it = values.find(col);
    if (it == values.end()) throw DataError("missing grouping column '" + col + "'");
    if (!key.empty()) key += ':';
    key += format_value(it->second);
  }
  return key;
}

ModelDesign ModelDesign::build(const ModelFormula& formula, const PoolDataset& data) {
  if (data.empty()) throw DataError("cannot fit a model to an empty dataset");
  if (formula.response != data.result_column())
    throw DataError("formula response '" + formula.response + "' does not match the dataset result column '" +
                    data.result_column() + "'");

  ModelDesign d;
  d.link = formula.link;
  const auto& pools = data.pools();
  const std::size_t n = pools.size();
  d.sizes.reserve(n);
  d.positive.reserve(n);
  for (const Pool& pool : pools) {
    d.sizes.push_back(pool.size);
    d.positive.push_back(pool.positive ? 1 : 0);
  }

  // Column typing: categorical iff any value is a string.
  auto is_categorical = [&](const std::string& col) {
    for (const Pool& pool : pools) {
      if (!value_is_numeric(data.value(pool, col))) return true;
    }
    return false;
  };

  d.fixed.columns.push_back({"(Intercept)", "", ""});
  std::set<std::string> seen;
  for (const std::string& term : formula.fixed_terms) {
    if (!data.has_column(term)) throw DataError("unknown covariate '" + term + "'");
    if (!seen.insert(term).second) continue;  // duplicated term is a no-op
    d.fixed.terms.push_back(term);
    if (is_categorical(term)) {
      std::set<std::string> levels;
      for (const Pool& pool : pools) levels.insert(format_value(data.value(pool, term)));
      std::vector<std::string> sorted(levels.begin(), levels.end());
      d.fixed.categorical_levels[term] = sorted;
      for (std::size_t k = 1; k < sorted.size(); ++k)
        d.fixed.columns.push_back({term + sorted[k], term, sorted[k]});
    } else {
      d.fixed.columns.push_back({term, term, ""});
    }
  }

  d.X.resize(n, d.fixed.dim());
  for (std::size_t i = 0; i < n; ++i) d.X.row(i) = d.fixed.row(pools[i].covariates).transpose();

  int offset = 0;
  for (const ModelFormula::RandomTerm& spec : formula.random_terms) {
    GroupTerm term;
    term.spec = spec;
    term.label = spec.group_columns.back();
    term.inner_dim = spec.slope.empty() ? 1 : 2;
    term.offset = offset;
    for (const std::string& col : spec.group_columns) {
      if (!data.has_column(col)) throw DataError("unknown grouping column '" + col + "'");
    }
    if (!spec.slope.empty()) {
      if (!data.has_column(spec.slope)) throw DataError("unknown covariate '" + spec.slope + "'");
      if (is_categorical(spec.slope))
        throw DataError("random slope covariate '" + spec.slope + "' must be numeric");
    }

    std::map<std::string, int> index;
    term.level_of_pool.resize(n);
    if (term.inner_dim == 2) term.slope_of_pool.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string key = term.key_for(pools[i].covariates);
      auto [it, inserted] = index.emplace(key, 0);
      if (inserted) it->second = -1;  // placeholder until keys are sorted
      if (term.inner_dim == 2)
        term.slope_of_pool[i] = value_as_number(data.value(pools[i], spec.slope));
    }
    term.level_keys.reserve(index.size());
    for (auto& [key, idx] : index) {
      idx = static_cast<int>(term.level_keys.size());
      term.level_keys.push_back(key);
    }
    for (std::size_t i = 0; i < n; ++i)
      term.level_of_pool[i] = index.at(term.key_for(pools[i].covariates));

    offset += term.inner_dim * term.num_levels();
    d.terms.push_back(std::move(term));
  }
  d.u_dim = offset;
  return d;
}

Eigen::VectorXd ModelDesign::linear_predictor(const Eigen::VectorXd& beta, const Eigen::VectorXd& u) const {
  Eigen::VectorXd eta = X * beta;
  for (const GroupTerm& term : terms) {
    for (std::size_t i = 0; i < num_pools(); ++i) {
      const int level = term.level_of_pool[i];
      eta[static_cast<Eigen::Index>(i)] += u[term.u_index(level, 0)];
      if (term.inner_dim == 2) eta[static_cast<Eigen::Index>(i)] += u[term.u_index(level, 1)] * term.slope_of_pool[i];
    }
  }
  return eta;
}

}  // namespace pooltest
