#include <doctest.h>

#include "pooltest/formula.hpp"

using namespace pooltest;

TEST_CASE("formula parsing") {
  SUBCASE("fixed effects only") {
    const ModelFormula f = parse_formula("Result ~ Region + Year");
    CHECK(f.response == "Result");
    REQUIRE(f.fixed_terms.size() == 2);
    CHECK(f.fixed_terms[0] == "Region");
    CHECK(f.fixed_terms[1] == "Year");
    CHECK(f.random_terms.empty());
    CHECK(f.link == Link::logit);
  }

  SUBCASE("intercept only") {
    const ModelFormula f = parse_formula("Result ~ 1");
    CHECK(f.fixed_terms.empty());
    CHECK(f.random_terms.empty());
  }

  SUBCASE("nested random intercepts expand") {
    const ModelFormula f = parse_formula("Result ~ Region + Year + (1|Village/Site)");
    REQUIRE(f.random_terms.size() == 2);
    CHECK(f.random_terms[0].group_columns == std::vector<std::string>{"Village"});
    CHECK(f.random_terms[1].group_columns == std::vector<std::string>{"Village", "Site"});
    CHECK(f.random_terms[0].slope.empty());
  }

  SUBCASE("correlated intercept-slope blocks") {
    const ModelFormula f = parse_formula("Result ~ Region + Year + (1 + Year|Village) + (1|Site)");
    REQUIRE(f.random_terms.size() == 2);
    CHECK(f.random_terms[0].slope == "Year");
    CHECK(f.random_terms[0].group_columns == std::vector<std::string>{"Village"});
    CHECK(f.random_terms[1].slope.empty());
    CHECK(f.random_terms[1].group_columns == std::vector<std::string>{"Site"});
  }

  SUBCASE("whitespace is irrelevant") {
    const ModelFormula a = parse_formula("Result~Region+Year+(1|Village/Site)");
    const ModelFormula b = parse_formula("  Result ~ Region +\tYear + ( 1 | Village / Site )");
    CHECK(a.fixed_terms == b.fixed_terms);
    REQUIRE(a.random_terms.size() == b.random_terms.size());
    CHECK(a.random_terms[1].group_columns == b.random_terms[1].group_columns);
  }

  SUBCASE("errors carry character offsets and name the construct") {
    CHECK_THROWS_WITH_AS(parse_formula("Result Region"), doctest::Contains("'~'"), FormulaError);
    CHECK_THROWS_WITH_AS(parse_formula("Result ~ a*b"), doctest::Contains("interaction"),
                         FormulaError);
    CHECK_THROWS_WITH_AS(parse_formula("Result ~ a - 1"), doctest::Contains("not supported"),
                         FormulaError);
    CHECK_THROWS_WITH_AS(parse_formula("Result ~ (Region|Village)"), doctest::Contains("'1'"),
                         FormulaError);
    CHECK_THROWS_AS(parse_formula("~ Region"), FormulaError);
    CHECK_THROWS_AS(parse_formula("Result ~ (1|)"), FormulaError);
    try {
      parse_formula("Result ~ a*b");
    } catch (const FormulaError& e) {
      CHECK(e.offset() == 10);
    }
  }
}
