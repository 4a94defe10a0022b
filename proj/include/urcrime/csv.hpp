#pragma once

// Minimal CSV reading/writing for the toolkit's own file formats. Fields are
// comma separated; a field may be wrapped in double quotes (no embedded
// quotes). Lines starting with '#' are provenance comments and are skipped.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "urcrime/error.hpp"

namespace urcrime::csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        std::string_view field =
            trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
            field = field.substr(1, field.size() - 2);
        }
        out.emplace_back(field);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

class Table {
public:
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row
    std::string source;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw DataError(source + ": missing required column '" + std::string(name) + "'");
    }

    bool has_column(std::string_view name) const {
        for (const auto& h : header) {
            if (h == name) return true;
        }
        return false;
    }

    std::string where(std::size_t row) const {
        return source + ":" + std::to_string(line_numbers[row]);
    }
};

inline Table parse(std::istream& in, std::string source) {
    Table t;
    t.source = std::move(source);
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        if (!have_header) {
            std::string_view hv = view;
            if (hv.size() >= 3 && static_cast<unsigned char>(hv[0]) == 0xEF) hv.remove_prefix(3);  // UTF-8 BOM
            t.header = split_line(hv);
            have_header = true;
            continue;
        }
        auto fields = split_line(view);
        if (fields.size() != t.header.size()) {
            throw DataError(t.source + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(lineno);
    }
    if (!have_header) throw DataError(t.source + ": missing header line");
    return t;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return parse(in, path);
}

inline double to_double(const std::string& text, const std::string& where) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw DataError(where + ": not a number: '" + text + "'");
    }
    return v;
}

inline long long to_integer(const std::string& text, const std::string& where) {
    long long v = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw DataError(where + ": not an integer: '" + text + "'");
    }
    return v;
}

// Shortest representation that round-trips a 64-bit double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw IoError("failed writing '" + path + "'");
}

} // namespace urcrime::csv
