#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pooltest {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

/// RFC-4180-ish reader: quoted fields, embedded commas and quotes. Throws
/// DataError with the 1-based file line on ragged rows.
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

std::string csv_escape(const std::string& field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

/// Write a file atomically: contents go to a temporary sibling which is
/// renamed over the target only after a successful write.
void atomic_write_file(const std::string& path, const std::string& contents);

}  // namespace pooltest
