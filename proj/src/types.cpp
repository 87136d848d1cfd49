#include "pooltest/types.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace pooltest {

bool value_is_numeric(const Value& v) { return std::holds_alternative<double>(v); }

double value_as_number(const Value& v) {
  if (!value_is_numeric(v)) throw DataError("expected a numeric value, got '" + std::get<std::string>(v) + "'");
  return std::get<double>(v);
}

std::string format_value(const Value& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", std::get<double>(v));
  return buf;
}

int compare_values(const Value& a, const Value& b) {
  if (value_is_numeric(a) && value_is_numeric(b)) {
    const double x = std::get<double>(a), y = std::get<double>(b);
    return x < y ? -1 : (x > y ? 1 : 0);
  }
  const std::string sa = format_value(a), sb = format_value(b);
  return sa < sb ? -1 : (sa > sb ? 1 : 0);
}

Link link_from_string(const std::string& name) {
  if (name == "logit") return Link::logit;
  if (name == "cloglog") return Link::cloglog;
  throw std::invalid_argument("unknown link '" + name + "' (expected logit or cloglog)");
}

std::string link_to_string(Link link) { return link == Link::logit ? "logit" : "cloglog"; }

std::string method_to_string(EstimateMethod m) {
  switch (m) {
    case EstimateMethod::mle_lr: return "mle_lr";
    case EstimateMethod::bayes_quadrature: return "bayes_quadrature";
    case EstimateMethod::bayes_mcmc_hier: return "bayes_mcmc_hier";
  }
  return "unknown";
}

PoolDataset::PoolDataset(std::vector<Pool> pools, std::vector<std::string> covariate_columns,
                         std::vector<std::string> hierarchy_columns)
    : pools_(std::move(pools)),
      covariate_columns_(std::move(covariate_columns)),
      hierarchy_columns_(std::move(hierarchy_columns)) {
  for (Pool& pool : pools_) {
    pool.hierarchy_path.clear();
    pool.hierarchy_path.reserve(hierarchy_columns_.size());
    for (const std::string& col : hierarchy_columns_) {
      auto it = pool.covariates.find(col);
      if (it == pool.covariates.end()) throw DataError("pool is missing hierarchy column '" + col + "'");
      pool.hierarchy_path.push_back(format_value(it->second));
    }
  }
  validate();
}

void PoolDataset::validate() const {
  for (const Pool& pool : pools_) {
    if (pool.size < 1) throw DataError("pool size must be a positive integer");
    for (const std::string& col : covariate_columns_) {
      if (pool.covariates.find(col) == pool.covariates.end())
        throw DataError("pool is missing covariate column '" + col + "'");
    }
    if (pool.hierarchy_path.size() != hierarchy_columns_.size())
      throw DataError("pool hierarchy path does not match declared hierarchy depth");
    for (const std::string& entry : pool.hierarchy_path) {
      if (entry.empty()) throw DataError("hierarchy identifiers must be non-empty");
    }
  }
}

long long PoolDataset::total_individuals() const {
  long long n = 0;
  for (const Pool& pool : pools_) n += pool.size;
  return n;
}

long long PoolDataset::positive_individuals() const {
  long long n = 0;
  for (const Pool& pool : pools_)
    if (pool.positive) n += pool.size;
  return n;
}

bool PoolDataset::all_negative() const {
  return std::none_of(pools_.begin(), pools_.end(), [](const Pool& p) { return p.positive; });
}

bool PoolDataset::all_positive() const {
  return std::all_of(pools_.begin(), pools_.end(), [](const Pool& p) { return p.positive; });
}

bool PoolDataset::has_column(const std::string& name) const {
  if (std::find(covariate_columns_.begin(), covariate_columns_.end(), name) != covariate_columns_.end())
    return true;
  return std::find(hierarchy_columns_.begin(), hierarchy_columns_.end(), name) != hierarchy_columns_.end();
}

const Value& PoolDataset::value(const Pool& pool, const std::string& column) const {
  auto it = pool.covariates.find(column);
  if (it == pool.covariates.end()) throw DataError("unknown column '" + column + "'");
  return it->second;
}

PoolDataset PoolDataset::with_hierarchy(const std::vector<std::string>& columns) const {
  for (const std::string& col : columns) {
    if (!has_column(col)) throw DataError("unknown hierarchy column '" + col + "'");
  }
  PoolDataset out(pools_, covariate_columns_, columns);
  out.result_column_ = result_column_;
  out.size_column_ = size_column_;
  return out;
}

std::vector<Stratum> stratify(const PoolDataset& data, const std::vector<std::string>& columns) {
  for (const std::string& col : columns) {
    if (!data.has_column(col)) throw DataError("unknown stratifying column '" + col + "'");
  }
  if (columns.empty()) {
    return {Stratum{{}, data}};
  }

  struct KeyLess {
    bool operator()(const std::vector<Value>& a, const std::vector<Value>& b) const {
      for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        const int c = compare_values(a[i], b[i]);
        if (c != 0) return c < 0;
      }
      return a.size() < b.size();
    }
  };
  std::map<std::vector<Value>, std::vector<Pool>, KeyLess> cells;
  for (const Pool& pool : data.pools()) {
    std::vector<Value> key;
    key.reserve(columns.size());
    for (const std::string& col : columns) key.push_back(data.value(pool, col));
    cells[std::move(key)].push_back(pool);
  }

  std::vector<Stratum> out;
  out.reserve(cells.size());
  for (auto& [key, pools] : cells) {
    Stratum s;
    for (std::size_t i = 0; i < columns.size(); ++i) s.key.emplace_back(columns[i], key[i]);
    s.data = PoolDataset(std::move(pools), data.covariate_columns(), data.hierarchy_columns());
    s.data.set_result_column(data.result_column());
    s.data.set_size_column(data.size_column());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pooltest
