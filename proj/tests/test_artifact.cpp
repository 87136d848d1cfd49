#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "pooltest/artifact.hpp"
#include "pooltest/csv.hpp"
#include "pooltest/simulator.hpp"

using namespace pooltest;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("pooltest_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

SimResult small_sim() {
  SimConfig cfg;
  cfg.villages_per_region = 2;
  cfg.sites_per_village = 2;
  cfg.catch_mean = 60.0;
  cfg.seed = 3;
  return simulate(cfg);
}

void check_tables_equal(const std::vector<PrevalenceTable>& a, const std::vector<PrevalenceTable>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].name == b[t].name);
    CHECK(a[t].columns == b[t].columns);
    REQUIRE(a[t].rows.size() == b[t].rows.size());
    for (std::size_t r = 0; r < a[t].rows.size(); ++r) {
      CHECK(a[t].rows[r].estimate == doctest::Approx(b[t].rows[r].estimate).epsilon(1e-12));
      CHECK(a[t].rows[r].low == doctest::Approx(b[t].rows[r].low).epsilon(1e-12));
      CHECK(a[t].rows[r].high == doctest::Approx(b[t].rows[r].high).epsilon(1e-12));
    }
  }
}

}  // namespace

TEST_CASE("frequentist artifacts round trip through JSON" * doctest::timeout(300)) {
  const SimResult sim = small_sim();
  TempDir dir;

  SUBCASE("fixed effects") {
    const FittedModel model = fit_glm(parse_formula("Result ~ Region + Year"), sim.data);
    const std::string path = (dir.path / "glm.json").string();
    save_model(model, path);
    const FittedModel loaded = load_model(path);
    CHECK(loaded.framework == Framework::frequentist);
    CHECK(loaded.formula.text == model.formula.text);
    check_tables_equal(get_prevalence(model), get_prevalence(loaded));
    std::vector<std::map<std::string, Value>> newdata{
        {{"Region", std::string("A")}, {"Year", 4.0}}};
    check_tables_equal(get_prevalence(model, newdata), get_prevalence(loaded, newdata));
  }

  SUBCASE("mixed effects keep the conditional covariance") {
    const FittedModel model =
        fit_glmm_laplace(parse_formula("Result ~ Region + Year + (1|Village/Site)"), sim.data);
    const std::string path = (dir.path / "glmm.json").string();
    save_model(model, path);
    CHECK(std::filesystem::exists(dir.path / "glmm_ucov.csv"));
    const FittedModel loaded = load_model(path);
    check_tables_equal(get_prevalence(model), get_prevalence(loaded));
  }
}

TEST_CASE("bayesian artifacts store draws in a sidecar" * doctest::timeout(300)) {
  const SimResult sim = small_sim();
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.warmup_iters = 400;
  cfg.sampling_iters = 600;
  cfg.seed = 5;
  const FittedModel model =
      fit_bayes(parse_formula("Result ~ Region + Year + (1|Village)"), sim.data, {}, cfg);
  TempDir dir;
  const std::string path = (dir.path / "bayes.json").string();
  save_model(model, path);
  CHECK(std::filesystem::exists(dir.path / "bayes_draws.csv"));
  const FittedModel loaded = load_model(path);
  CHECK(loaded.draws.num_chains == model.draws.num_chains);
  CHECK(loaded.draws.iters_per_chain == model.draws.iters_per_chain);
  check_tables_equal(get_prevalence(model), get_prevalence(loaded));
}

TEST_CASE("artifact validation") {
  TempDir dir;
  const std::string path = (dir.path / "bad.json").string();
  atomic_write_file(path, "{\"schema_version\": 99}\n");
  CHECK_THROWS_AS(load_model(path), DataError);
  CHECK_THROWS_AS(load_model((dir.path / "absent.json").string()), DataError);
}
