#pragma once

#include <string>
#include <vector>

namespace isomix {

/// Delimited text table: comma separated, UTF-8, one header row.
struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index for a header name, or -1 when absent.
  int column(const std::string& name) const;
  /// Header line number of a data row (for error messages): rows[i] is line i+2.
  static int line_of(std::size_t row_index) { return static_cast<int>(row_index) + 2; }
};

/// Reads a CSV file; throws std::runtime_error with "path:line: message" on
/// malformed content (ragged rows, empty file, missing header).
CsvTable read_csv(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Shortest representation that round-trips a double exactly.
std::string format_double(double x);

/// Strict double parse; throws std::runtime_error mentioning `context`.
double parse_double(const std::string& s, const std::string& context);

}  // namespace isomix
