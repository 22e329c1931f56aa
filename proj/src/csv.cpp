#include "megc/csv.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace megc {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string csv_to_string(const std::vector<CsvRow>& rows) {
    std::string out;
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += row[i];
        }
        out += '\n';
    }
    return out;
}

std::vector<CsvRow> csv_from_string(const std::string& text) {
    std::vector<CsvRow> rows;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        CsvRow row;
        size_t cell = pos;
        while (cell <= end) {
            size_t comma = text.find(',', cell);
            if (comma == std::string::npos || comma > end) comma = end;
            row.push_back(text.substr(cell, comma - cell));
            cell = comma + 1;
            if (comma == end) break;
        }
        rows.push_back(std::move(row));
        pos = end + 1;
    }
    return rows;
}

void write_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    const std::string text = csv_to_string(rows);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return csv_from_string(text);
}

}  // namespace megc
