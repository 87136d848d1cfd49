#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "pooltest/formula.hpp"
#include "pooltest/types.hpp"

namespace pooltest {

/// Expansion of the fixed-effect terms into coefficient columns.
/// Categorical covariates are treatment-coded against the
/// lexicographically first level.
struct FixedSpec {
  struct Column {
    std::string name;   // coefficient label ("(Intercept)", "RegionB", "Year")
    std::string term;   // source covariate; empty for the intercept
    std::string level;  // indicator level for categorical columns
  };
  std::vector<Column> columns;
  std::vector<std::string> terms;  // source covariates in formula order
  std::map<std::string, std::vector<std::string>> categorical_levels;

  int dim() const { return static_cast<int>(columns.size()); }
  /// Design row for one covariate assignment; throws DataError on missing
  /// covariates or unseen categorical levels.
  Eigen::VectorXd row(const std::map<std::string, Value>& values) const;
};

/// One realized random-effect term: grouping levels observed in the data
/// plus the per-pool group assignment.
struct GroupTerm {
  ModelFormula::RandomTerm spec;
  std::string label;  // table name: last group column
  int inner_dim = 1;  // 1, or 2 for correlated intercept-slope blocks
  int offset = 0;     // first index into the stacked u vector
  std::vector<std::string> level_keys;  // sorted group keys
  std::vector<int> level_of_pool;
  std::vector<double> slope_of_pool;  // empty unless inner_dim == 2

  int num_levels() const { return static_cast<int>(level_keys.size()); }
  int u_index(int level, int component = 0) const { return offset + level * inner_dim + component; }
  /// Group key of an arbitrary covariate assignment.
  std::string key_for(const std::map<std::string, Value>& values) const;
};

/// Everything a fit needs: response, sizes, fixed design matrix and the
/// random-term structure.
struct ModelDesign {
  Link link = Link::logit;
  FixedSpec fixed;
  Eigen::MatrixXd X;  // num_pools x fixed.dim()
  std::vector<int> sizes;
  std::vector<char> positive;
  std::vector<GroupTerm> terms;
  int u_dim = 0;

  static ModelDesign build(const ModelFormula& formula, const PoolDataset& data);

  std::size_t num_pools() const { return sizes.size(); }
  Eigen::VectorXd linear_predictor(const Eigen::VectorXd& beta, const Eigen::VectorXd& u) const;
};

}  // namespace pooltest
