#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace megc {

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

using CsvRow = std::vector<std::string>;

/// Plain comma-separated cells, one '\n' per row, no quoting. parse/emit
/// round-trips byte-identically.
std::string csv_to_string(const std::vector<CsvRow>& rows);
std::vector<CsvRow> csv_from_string(const std::string& text);

void write_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows);
std::vector<CsvRow> read_csv(const std::filesystem::path& path);

}  // namespace megc
