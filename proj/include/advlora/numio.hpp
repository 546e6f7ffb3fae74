#pragma once

#include <string>

namespace advlora {

// Shortest decimal representation that round-trips the exact double.
std::string format_double(double v);

// Bit-exact hex-float encoding ("0x1.921fb54442d18p+1") and its inverse.
std::string to_hex_double(double v);
double from_hex_double(const std::string& s);

// Fixed two-decimal rendering used in reports ("48.69").
std::string format_percent(double v);

// Round to the double nearest the two-decimal rendering, so a written
// report parses back to exactly the stored value.
double round2(double v);

} // namespace advlora
