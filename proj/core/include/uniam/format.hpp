#pragma once

// Text helpers for the CSV formats: 17-significant-digit doubles so values
// survive a write/read cycle bit-for-bit.

#include <string>
#include <string_view>
#include <vector>

namespace uniam {

std::string format_double(double v);
/// Shortest text that parses back to the same double.
std::string format_shortest(double v);
/// Throws ArgumentError on malformed or trailing input.
double parse_double(std::string_view s);
int parse_int(std::string_view s);
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace uniam
