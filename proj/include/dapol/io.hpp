#pragma once

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <type_traits>
#include <vector>

#include "dapol/error.hpp"

namespace dapol::io {

/// Shortest decimal text that round-trips to the same double.
inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw invalid_argument("not a number: '" + s + "'");
    return v;
}

/// Minimal CSV writer: comma-separated, no quoting (fields never contain commas).
class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    CsvWriter& header(const std::vector<std::string>& cols) {
        row_strings(cols);
        return *this;
    }

    template <typename... Ts>
    CsvWriter& row(const Ts&... fields) {
        bool first = true;
        ((write_field(fields, first)), ...);
        os_ << '\n';
        return *this;
    }

    CsvWriter& row_strings(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) os_ << (i ? "," : "") << fields[i];
        os_ << '\n';
        return *this;
    }

private:
    template <typename T>
    void write_field(const T& v, bool& first) {
        if (!first) os_ << ',';
        first = false;
        if constexpr (std::is_floating_point_v<T>) os_ << fmt(static_cast<double>(v));
        else os_ << v;
    }

    std::ostream& os_;
};

/// Splits one CSV line on commas.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw invalid_argument("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << contents;
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace dapol::io
