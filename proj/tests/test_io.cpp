#include <doctest.h>

#include <sstream>

#include "pooltest/io.hpp"
#include "pooltest/simulator.hpp"

using namespace pooltest;

namespace {
CsvTable csv_from(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}
}  // namespace

TEST_CASE("csv reader") {
  const CsvTable t = csv_from("a,b\n1,\"x,y\"\n2,\"he said \"\"hi\"\"\"\n");
  REQUIRE(t.header.size() == 2);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[1][1] == "he said \"hi\"");
  CHECK_THROWS_WITH_AS(csv_from("a,b\n1\n"), doctest::Contains("line 2"), DataError);
}

TEST_CASE("dataset ingestion") {
  SUBCASE("basic load with type inference") {
    const PoolDataset data = ingest_csv(
        csv_from("Result,NumInPool,Region,Village,Site,Year\n0,25,A,A-1,A-1-1,0\n1,10,B,B-2,B-2-3,2\n"));
    REQUIRE(data.num_pools() == 2);
    CHECK(data.pools()[0].size == 25);
    CHECK_FALSE(data.pools()[0].positive);
    CHECK(data.pools()[1].positive);
    CHECK(value_is_numeric(data.value(data.pools()[0], "Year")));
    CHECK_FALSE(value_is_numeric(data.value(data.pools()[0], "Region")));
    CHECK(data.total_individuals() == 35);
    CHECK(data.positive_individuals() == 10);
  }

  SUBCASE("result spellings") {
    const PoolDataset data = ingest_csv(
        csv_from("Result,NumInPool\ntrue,1\nFALSE,2\nPos,3\nneg,4\n1,5\n0,6\n"));
    CHECK(data.pools()[0].positive);
    CHECK_FALSE(data.pools()[1].positive);
    CHECK(data.pools()[2].positive);
    CHECK_FALSE(data.pools()[3].positive);
  }

  SUBCASE("bad result cites row and column") {
    CHECK_THROWS_WITH_AS(ingest_csv(csv_from("Result,NumInPool\n0,5\n2,5\n")),
                         doctest::Contains("line 3, column 'Result'"), DataError);
  }

  SUBCASE("integer coercion of pool sizes") {
    const PoolDataset ok = ingest_csv(csv_from("Result,NumInPool\n0,25.0\n"));
    CHECK(ok.pools()[0].size == 25);
    CHECK_THROWS_WITH_AS(ingest_csv(csv_from("Result,NumInPool\n0,25.5\n")),
                         doctest::Contains("NumInPool"), DataError);
    CHECK_THROWS_WITH_AS(ingest_csv(csv_from("Result,NumInPool\n0,0\n")),
                         doctest::Contains("positive integer"), DataError);
  }

  SUBCASE("missing required columns") {
    CHECK_THROWS_WITH_AS(ingest_csv(csv_from("Result,N\n0,5\n")), doctest::Contains("NumInPool"),
                         DataError);
    IngestOptions opts;
    opts.result_column = "Outcome";
    CHECK_THROWS_WITH_AS(ingest_csv(csv_from("Result,NumInPool\n0,5\n"), opts),
                         doctest::Contains("Outcome"), DataError);
  }
}

TEST_CASE("simulate -> ingest -> emit round trip") {
  SimConfig cfg;
  cfg.villages_per_region = 2;
  cfg.sites_per_village = 2;
  cfg.catch_mean = 40.0;
  cfg.seed = 11;
  const SimResult sim = simulate(cfg);
  const std::string csv1 = dataset_to_csv(sim.data);
  IngestOptions opts;
  opts.hierarchy_columns = {"Village", "Site"};
  const PoolDataset back = ingest_csv(csv_from(csv1), opts);

  REQUIRE(back.num_pools() == sim.data.num_pools());
  for (std::size_t i = 0; i < back.num_pools(); ++i) {
    const Pool& a = sim.data.pools()[i];
    const Pool& b = back.pools()[i];
    CHECK(a.size == b.size);
    CHECK(a.positive == b.positive);
    for (const std::string& col : sim.data.covariate_columns())
      CHECK(format_value(sim.data.value(a, col)) == format_value(back.value(b, col)));
  }
  CHECK(dataset_to_csv(back) == csv1);
}
