#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace precipx::csv {

/// Shortest round-trip decimal form; "nan"/"inf" for non-finite values.
std::string format_double(double x);

std::vector<std::string_view> split(std::string_view line);

/// Strict parse of the whole field; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view field);
std::optional<long long> parse_int(std::string_view field);

struct Row {
  std::size_t line = 0;  // 1-based line number in the source
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Index of a header column, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
  std::size_t require_column(std::string_view name) const;
};

/// Reads a headed CSV. Blank lines are skipped; CR line endings tolerated.
Table read(std::istream& in);
Table read_file(const std::filesystem::path& path);

/// Writes `content` to `path` via a temporary file and rename.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace precipx::csv
