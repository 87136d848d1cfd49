#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pooltest/csv.hpp"
#include "pooltest/types.hpp"

namespace pooltest {

struct IngestOptions {
  std::string result_column = "Result";
  std::string size_column = "NumInPool";
  std::vector<std::string> hierarchy_columns;
};

/// Load a pooled-testing CSV. Result accepts 0/1, true/false, pos/neg
/// (case-insensitive); pool sizes must be positive integers (a trailing
/// ".0" is tolerated). Every other column is kept as a covariate, typed
/// numeric when all its values parse as numbers. Errors cite the 1-based
/// file line and column name.
PoolDataset ingest_csv(const CsvTable& table, const IngestOptions& options = {});
PoolDataset ingest_csv_file(const std::string& path, const IngestOptions& options = {});

/// Re-emit a dataset in the ingestion schema (covariates round-trip
/// exactly; see format_value).
std::string dataset_to_csv(const PoolDataset& data);

/// A plain covariate table (for prediction newdata), numeric columns
/// inferred the same way.
std::vector<std::map<std::string, Value>> covariate_table(const CsvTable& table);

}  // namespace pooltest
