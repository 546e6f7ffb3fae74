#include "advlora/numio.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "advlora/errors.hpp"

namespace advlora {

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw NumericalError("format_double failed");
    return std::string(buf.data(), ptr);
}

std::string to_hex_double(double v) {
    std::array<char, 64> buf{};
    const int n = std::snprintf(buf.data(), buf.size(), "%a", v);
    if (n <= 0) throw NumericalError("to_hex_double failed");
    return std::string(buf.data(), static_cast<std::size_t>(n));
}

double from_hex_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        throw ParseError("invalid hex float: '" + s + "'");
    return v;
}

std::string format_percent(double v) {
    std::array<char, 64> buf{};
    const int n = std::snprintf(buf.data(), buf.size(), "%.2f", v);
    if (n <= 0) throw NumericalError("format_percent failed");
    return std::string(buf.data(), static_cast<std::size_t>(n));
}

double round2(double v) {
    char* end = nullptr;
    const std::string s = format_percent(v);
    return std::strtod(s.c_str(), &end);
}

} // namespace advlora
