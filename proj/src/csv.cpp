#include "jointfuse/csv.hpp"

#include "jointfuse/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace jointfuse::csv {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\"");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

int Table::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return static_cast<int>(j);
  }
  return -1;
}

Table read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::DataError, "cannot open " + path);
  Table table;
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw Error(ErrorKind::DataError, path + " has no header row");
  }
  table.header = split(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (cells.size() != table.header.size()) {
      throw Error(ErrorKind::DataError, path + ":" + std::to_string(line_no) + " has " +
                                            std::to_string(cells.size()) + " cells, expected " +
                                            std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(const std::string& cell) {
  const std::string s = trim(cell);
  if (s.empty() || s == "NA") return std::nullopt;
  if (s == "inf" || s == "Inf") return HUGE_VAL;
  if (s == "-inf" || s == "-Inf") return -HUGE_VAL;
  if (s == "nan" || s == "NaN") return std::nan("");
  double value = 0.0;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  auto res = std::from_chars(begin, s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace jointfuse::csv
