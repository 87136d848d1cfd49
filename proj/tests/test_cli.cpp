#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "pooltest/csv.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("pooltest_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args, const fs::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + POOLTEST_CLI_PATH + "' " + args +
                          " >cli_stdout.txt 2>cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("simulate is byte-identical across runs and thread counts") {
  TempDir dir;
  REQUIRE(run_cli("simulate --seed 17 --villages 2 --sites 2 --catch-mean 40 "
                  "--output-data a.csv --output-truth ta.csv",
                  dir.path) == 0);
  REQUIRE(run_cli("simulate --seed 17 --villages 2 --sites 2 --catch-mean 40 "
                  "--output-data b.csv --output-truth tb.csv",
                  dir.path) == 0);
  CHECK(slurp(dir.path / "a.csv") == slurp(dir.path / "b.csv"));
  CHECK(slurp(dir.path / "ta.csv") == slurp(dir.path / "tb.csv"));

  setenv("POOLTEST_THREADS", "3", 1);
  REQUIRE(run_cli("simulate --seed 17 --villages 2 --sites 2 --catch-mean 40 "
                  "--output-data c.csv",
                  dir.path) == 0);
  unsetenv("POOLTEST_THREADS");
  CHECK(slurp(dir.path / "a.csv") == slurp(dir.path / "c.csv"));
}

TEST_CASE("prev emits two framework rows per stratum and both formats agree") {
  TempDir dir;
  REQUIRE(run_cli("simulate --seed 5 --villages 2 --sites 2 --catch-mean 60 --output-data d.csv",
                  dir.path) == 0);
  REQUIRE(run_cli("prev -i d.csv --stratify Region,Year -o prev.csv", dir.path) == 0);
  const pooltest::CsvTable table = pooltest::read_csv_file((dir.path / "prev.csv").string());
  CHECK(table.rows.size() == 18);  // 3 regions x 3 years x 2 frameworks

  REQUIRE(run_cli("prev -i d.csv --stratify Region,Year --format json -o prev.json", dir.path) == 0);
  std::ifstream jin(dir.path / "prev.json");
  nlohmann::json j;
  jin >> j;
  REQUIRE(j.size() == 18);
  const int est_col = table.column("Estimate");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const double csv_value = std::stod(table.rows[r][est_col]);
    const double json_value = j[r]["Estimate"].get<double>();
    // CSV carries 9 significant digits of the same number.
    CHECK(csv_value == doctest::Approx(json_value).epsilon(1e-8));
  }
}

TEST_CASE("reg prints the Box-style coefficient table and persists a model") {
  TempDir dir;
  REQUIRE(run_cli("simulate --seed 5 --villages 2 --sites 2 --catch-mean 60 --output-data d.csv",
                  dir.path) == 0);
  REQUIRE(run_cli("reg -i d.csv --formula \"Result ~ Region + Year\" -o coef.csv "
                  "--save-model model.json",
                  dir.path) == 0);
  const pooltest::CsvTable coef = pooltest::read_csv_file((dir.path / "coef.csv").string());
  REQUIRE(coef.rows.size() == 4);
  CHECK(coef.rows[0][0] == "(Intercept)");
  CHECK(coef.rows[1][0] == "RegionB");
  CHECK(coef.rows[2][0] == "RegionC");
  CHECK(coef.rows[3][0] == "Year");

  SUBCASE("predict emits one table per hierarchy level") {
    REQUIRE(run_cli("predict --model model.json --out-prefix pred", dir.path) == 0);
    CHECK(fs::exists(dir.path / "pred.PopulationEffects.csv"));
    const pooltest::CsvTable pop =
        pooltest::read_csv_file((dir.path / "pred.PopulationEffects.csv").string());
    CHECK(pop.rows.size() == 9);
    CHECK(pop.column("Estimate") >= 0);
    CHECK(pop.column("CILow") >= 0);
    CHECK(pop.column("CIHigh") >= 0);
  }

  SUBCASE("newdata prediction") {
    std::ofstream nd(dir.path / "new.csv");
    nd << "Region,Year\nA,3\nA,4\nA,5\n";
    nd.close();
    REQUIRE(run_cli("predict --model model.json --newdata new.csv --out-prefix fwd", dir.path) == 0);
    const pooltest::CsvTable fwd =
        pooltest::read_csv_file((dir.path / "fwd.PopulationEffects.csv").string());
    REQUIRE(fwd.rows.size() == 3);
  }
}

TEST_CASE("hierprev output is deterministic across thread counts" * doctest::timeout(600)) {
  TempDir dir;
  REQUIRE(run_cli("simulate --seed 9 --villages 2 --sites 2 --catch-mean 40 --output-data d.csv",
                  dir.path) == 0);
  const std::string cmd =
      "hierprev -i d.csv --hierarchy Village,Site --stratify Region --seed 4 "
      "--chains 2 --warmup 300 --samples 400";
  setenv("POOLTEST_THREADS", "1", 1);
  REQUIRE(run_cli(cmd + " -o h1.csv", dir.path) == 0);
  setenv("POOLTEST_THREADS", "4", 1);
  REQUIRE(run_cli(cmd + " -o h2.csv", dir.path) == 0);
  unsetenv("POOLTEST_THREADS");
  CHECK(slurp(dir.path / "h1.csv") == slurp(dir.path / "h2.csv"));
  const pooltest::CsvTable table = pooltest::read_csv_file((dir.path / "h1.csv").string());
  CHECK(table.rows.size() == 3);
  CHECK(table.column("CrILow") >= 0);
  CHECK(table.column("CrIHigh") >= 0);
}

TEST_CASE("exit codes") {
  TempDir dir;
  CHECK(run_cli("prev", dir.path) == 1);                       // missing required flags
  CHECK(run_cli("prev -i missing.csv", dir.path) == 2);        // data error
  CHECK(run_cli("nonsense", dir.path) != 0);

  std::ofstream bad(dir.path / "bad.csv");
  bad << "Result,NumInPool\n2,10\n";
  bad.close();
  CHECK(run_cli("prev -i bad.csv", dir.path) == 2);

  std::ofstream sep(dir.path / "sep.csv");
  sep << "Result,NumInPool,C\n";  // constant covariate: rank deficient
  for (int i = 0; i < 20; ++i) sep << (i % 5 == 0 ? 1 : 0) << ",10,1\n";
  sep.close();
  CHECK(run_cli("reg -i sep.csv --formula \"Result ~ C\"", dir.path) == 3);

  // usage error: formula referencing an unsupported construct
  CHECK(run_cli("reg -i sep.csv --formula \"Result ~ a*b\"", dir.path) == 1);

  SUBCASE("no partial output is left behind on failure") {
    CHECK(run_cli("prev -i bad.csv -o out.csv", dir.path) == 2);
    CHECK_FALSE(fs::exists(dir.path / "out.csv"));
    CHECK_FALSE(fs::exists(dir.path / "out.csv.tmp"));
  }
}
