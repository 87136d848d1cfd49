#pragma once

#include <string>
#include <vector>

#include "pooltest/types.hpp"

namespace pooltest {

/// Parse error carrying the character offset of the offending token.
class FormulaError : public std::invalid_argument {
 public:
  FormulaError(const std::string& message, std::size_t offset)
      : std::invalid_argument(message + " (at character " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct ModelFormula {
  struct RandomTerm {
    /// Numeric covariate of a correlated intercept-slope block; empty for
    /// a plain random intercept.
    std::string slope;
    /// Columns whose concatenated values key the grouping factor. Nested
    /// specifications are already expanded, so `(1|A/B)` yields terms with
    /// group_columns {A} and {A, B}.
    std::vector<std::string> group_columns;
    std::string display;
  };

  std::string response;
  std::vector<std::string> fixed_terms;  // intercept is implicit
  std::vector<RandomTerm> random_terms;
  Link link = Link::logit;
  std::string text;
};

/// Grammar: response '~' term ('+' term)*, where a term is a covariate
/// name, a literal 1, or `(1|g)` / `(1 + x|g)` with g a '/'-nested group
/// path. Whitespace-insensitive. Unsupported constructs (interactions,
/// offsets, intercept removal) raise FormulaError naming the construct.
ModelFormula parse_formula(const std::string& text);

}  // namespace pooltest
