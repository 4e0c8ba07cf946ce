#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pickling::text {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char delimiter);

// Whole-field parses; throw InputError on trailing garbage or overflow.
int parse_int(std::string_view s);
long long parse_long(std::string_view s);
double parse_double(std::string_view s);
bool parse_bool(std::string_view s);

// Shortest representation that round-trips.
std::string format_double(double v);

// key=value lines; '#' starts a comment. Order is preserved.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in);

}  // namespace pickling::text
