#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace scanmix::io {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

/// Strict parse of a whole field; throws ParseError with the given line.
double parse_double(std::string_view field, std::size_t line);
long long parse_int(std::string_view field, std::size_t line);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace scanmix::io
