#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace apiarius::csv {

/// A parsed CSV file: one header row plus data rows of equal width.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws if absent.
  std::size_t column(const std::string& name) const;
};

Table read(const std::filesystem::path& path);

void write(const std::filesystem::path& path, const Table& table);

std::vector<std::string> split_line(const std::string& line);

/// Shortest round-trip decimal form of a double.
std::string format_number(double value);

double parse_number(const std::string& field);

}  // namespace apiarius::csv
