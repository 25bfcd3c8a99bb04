#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace vrfb {

/// Shortest decimal string that parses back to exactly `v`. Negative zero is
/// written as "-0.0" because JSON readers turn "-0" into an integer.
inline std::string format_shortest(double v) {
    if (v == 0.0 && std::signbit(v)) return "-0.0";
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ec == std::errc{} ? end : buf);
}

/// Decimal with at most nine significant digits, trailing zeros trimmed.
inline std::string format_sig9(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    return std::string(buf, ec == std::errc{} ? end : buf);
}

}  // namespace vrfb
