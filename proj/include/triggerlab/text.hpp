#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace triggerlab {

/// Shortest decimal rendering that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Strict double parse of a full token; rejects trailing garbage and
/// non-finite values by default.
inline double parse_double(std::string_view token, bool allow_non_finite = false) {
    double v = 0.0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw std::runtime_error("not a number: '" + std::string(token) + "'");
    if (!allow_non_finite && !std::isfinite(v))
        throw std::runtime_error("non-finite value: '" + std::string(token) + "'");
    return v;
}

inline long parse_long(std::string_view token) {
    long v = 0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw std::runtime_error("not an integer: '" + std::string(token) + "'");
    return v;
}

/// Splits one CSV line on commas. No quoting; none of the formats here need it.
inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t comma = line.find(',', pos);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

}  // namespace triggerlab
