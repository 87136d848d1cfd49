#include "pooltest/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace pooltest {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(out);
}

[[noreturn]] void row_error(std::size_t data_row, const std::string& column, const std::string& message) {
  // Header is line 1, so data row i sits on file line i + 1.
  throw DataError("line " + std::to_string(data_row + 2) + ", column '" + column + "': " + message);
}

bool parse_result(const std::string& raw, std::size_t row, const std::string& column) {
  const std::string v = lower(raw);
  if (v == "1" || v == "true" || v == "pos") return true;
  if (v == "0" || v == "false" || v == "neg") return false;
  row_error(row, column, "expected 0/1, true/false or pos/neg, got '" + raw + "'");
}

int parse_pool_size(const std::string& raw, std::size_t row, const std::string& column) {
  double value;
  if (!parse_double(raw, value)) row_error(row, column, "expected a positive integer, got '" + raw + "'");
  const double rounded = std::nearbyint(value);
  if (std::fabs(value - rounded) > 0.0 || rounded < 1.0 || rounded > 1e9)
    row_error(row, column, "expected a positive integer, got '" + raw + "'");
  return static_cast<int>(rounded);
}

}  // namespace

PoolDataset ingest_csv(const CsvTable& table, const IngestOptions& options) {
  const int result_col = table.column(options.result_column);
  if (result_col < 0) throw DataError("missing required column '" + options.result_column + "'");
  const int size_col = table.column(options.size_column);
  if (size_col < 0) throw DataError("missing required column '" + options.size_column + "'");

  std::vector<std::string> covariates;
  std::vector<int> covariate_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (static_cast<int>(c) == result_col || static_cast<int>(c) == size_col) continue;
    covariates.push_back(table.header[c]);
    covariate_cols.push_back(static_cast<int>(c));
  }

  // A column is numeric only if every value parses as a number.
  std::vector<bool> numeric(covariate_cols.size(), true);
  for (const auto& row : table.rows) {
    for (std::size_t k = 0; k < covariate_cols.size(); ++k) {
      double ignored;
      if (numeric[k] && !parse_double(row[covariate_cols[k]], ignored)) numeric[k] = false;
    }
  }

  std::vector<Pool> pools;
  pools.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    Pool pool;
    pool.positive = parse_result(row[result_col], i, options.result_column);
    pool.size = parse_pool_size(row[size_col], i, options.size_column);
    for (std::size_t k = 0; k < covariate_cols.size(); ++k) {
      const std::string& raw = row[covariate_cols[k]];
      if (numeric[k]) {
        double value;
        parse_double(raw, value);
        pool.covariates.emplace(covariates[k], value);
      } else {
        pool.covariates.emplace(covariates[k], raw);
      }
    }
    pools.push_back(std::move(pool));
  }

  for (const std::string& h : options.hierarchy_columns) {
    if (std::find(covariates.begin(), covariates.end(), h) == covariates.end())
      throw DataError("missing hierarchy column '" + h + "'");
  }
  PoolDataset data(std::move(pools), covariates, options.hierarchy_columns);
  data.set_result_column(options.result_column);
  data.set_size_column(options.size_column);
  return data;
}

PoolDataset ingest_csv_file(const std::string& path, const IngestOptions& options) {
  return ingest_csv(read_csv_file(path), options);
}

std::string dataset_to_csv(const PoolDataset& data) {
  std::ostringstream out;
  std::vector<std::string> fields;
  fields.push_back(data.result_column());
  fields.push_back(data.size_column());
  for (const std::string& c : data.covariate_columns()) fields.push_back(c);
  write_csv_row(out, fields);
  for (const Pool& pool : data.pools()) {
    fields.clear();
    fields.push_back(pool.positive ? "1" : "0");
    fields.push_back(std::to_string(pool.size));
    for (const std::string& c : data.covariate_columns()) fields.push_back(format_value(data.value(pool, c)));
    write_csv_row(out, fields);
  }
  return out.str();
}

std::vector<std::map<std::string, Value>> covariate_table(const CsvTable& table) {
  std::vector<bool> numeric(table.header.size(), true);
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      double ignored;
      if (numeric[c] && !parse_double(row[c], ignored)) numeric[c] = false;
    }
  }
  std::vector<std::map<std::string, Value>> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::map<std::string, Value> values;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (numeric[c]) {
        double value;
        parse_double(row[c], value);
        values.emplace(table.header[c], value);
      } else {
        values.emplace(table.header[c], row[c]);
      }
    }
    out.push_back(std::move(values));
  }
  return out;
}

}  // namespace pooltest
