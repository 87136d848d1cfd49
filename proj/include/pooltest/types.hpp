#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace pooltest {

/// Error in user-supplied data (bad CSV cell, unknown column, ...).
/// The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure (non-convergence, unstable quadrature, ...).
/// The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A covariate cell: columns are either numeric or categorical.
using Value = std::variant<double, std::string>;

bool value_is_numeric(const Value& v);
double value_as_number(const Value& v);

/// Render a value for output. Doubles use shortest round-trip-exact form
/// so re-ingesting an emitted dataset reproduces it field for field.
std::string format_value(const Value& v);

/// Total order used when sorting strata and prediction rows:
/// numeric values compare numerically, strings lexicographically.
int compare_values(const Value& a, const Value& b);

enum class Link { logit, cloglog };

Link link_from_string(const std::string& name);
std::string link_to_string(Link link);

/// One tested pool of specimens.
struct Pool {
  int size = 1;
  bool positive = false;
  std::map<std::string, Value> covariates;
  /// Values of the dataset's declared hierarchy columns, outermost first.
  std::vector<std::string> hierarchy_path;
};

/// A collection of pools with declared covariate and hierarchy columns.
/// Hierarchy columns are also present in each pool's covariate map so the
/// same column can stratify, group, or enter a regression formula.
class PoolDataset {
 public:
  PoolDataset() = default;
  PoolDataset(std::vector<Pool> pools, std::vector<std::string> covariate_columns,
              std::vector<std::string> hierarchy_columns = {});

  const std::vector<Pool>& pools() const { return pools_; }
  const std::vector<std::string>& covariate_columns() const { return covariate_columns_; }
  const std::vector<std::string>& hierarchy_columns() const { return hierarchy_columns_; }

  std::size_t num_pools() const { return pools_.size(); }
  bool empty() const { return pools_.empty(); }

  /// N = sum of pool sizes; N+ = individuals in positive pools.
  long long total_individuals() const;
  long long positive_individuals() const;

  bool all_negative() const;
  bool all_positive() const;

  bool has_column(const std::string& name) const;
  const Value& value(const Pool& pool, const std::string& column) const;

  /// Re-declare the hierarchy columns and rebuild every pool's path.
  PoolDataset with_hierarchy(const std::vector<std::string>& columns) const;

  /// The column names the dataset's result/size fields were read from
  /// (used to validate formula responses and to re-emit CSV).
  const std::string& result_column() const { return result_column_; }
  const std::string& size_column() const { return size_column_; }
  void set_result_column(std::string name) { result_column_ = std::move(name); }
  void set_size_column(std::string name) { size_column_ = std::move(name); }

 private:
  void validate() const;

  std::vector<Pool> pools_;
  std::vector<std::string> covariate_columns_;
  std::vector<std::string> hierarchy_columns_;
  std::string result_column_ = "Result";
  std::string size_column_ = "NumInPool";
};

/// Pools partitioned by the observed combinations of the given columns,
/// ordered lexicographically by stratum values. Empty `columns` yields a
/// single stratum covering the whole dataset.
struct Stratum {
  std::vector<std::pair<std::string, Value>> key;
  PoolDataset data;
};
std::vector<Stratum> stratify(const PoolDataset& data, const std::vector<std::string>& columns);

struct ConvergenceInfo {
  double max_rhat = 1.0;
  double min_ess = 0.0;
  bool flagged = false;
  std::string message;
};

enum class EstimateMethod { mle_lr, bayes_quadrature, bayes_mcmc_hier };
std::string method_to_string(EstimateMethod m);

struct PrevalenceEstimate {
  double point = 0.0;
  double interval_low = 0.0;
  double interval_high = 1.0;
  double level = 0.95;
  EstimateMethod method = EstimateMethod::mle_lr;
  long long num_pools = 0;
  long long num_individuals = 0;
  std::optional<double> prob_absent;
  std::vector<std::pair<std::string, Value>> stratum;
  std::optional<ConvergenceInfo> convergence;
};

}  // namespace pooltest
