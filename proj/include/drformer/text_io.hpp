#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

// Small helpers shared by the line-oriented file formats.
namespace drformer::text {

// Shortest decimal text that parses back to the same double.
std::string number(double value);

double parse_double(std::string_view token, std::size_t line);
std::uint64_t parse_uint(std::string_view token, std::size_t line);

std::vector<std::string_view> split_ws(std::string_view line);
std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

// Parses "magic v1 a=1 b=2" headers; throws ParseError on a magic mismatch.
std::map<std::string, std::string> parse_header(std::string_view line, std::string_view magic, std::size_t line_no);

}  // namespace drformer::text
