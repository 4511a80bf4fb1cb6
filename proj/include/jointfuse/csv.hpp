#pragma once

#include <optional>
#include <string>
#include <vector>

namespace jointfuse::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index or -1.
  int column(const std::string& name) const;
};

/// Reads a comma-separated file with a mandatory header row. Throws Error(DataError).
Table read(const std::string& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

/// Parses a full cell as a double; empty cells and junk give nullopt.
std::optional<double> parse_double(const std::string& cell);

}  // namespace jointfuse::csv
