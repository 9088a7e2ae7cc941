#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fnirs::csv {

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double v);

// Strict double parse: the whole token must be consumed, no surrounding
// whitespace. Returns false on any violation (including empty token).
bool parse_double(std::string_view token, double& out);

// Splits one line at commas. No quoting: the formats used here never embed
// commas in fields.
std::vector<std::string_view> split_fields(std::string_view line);

// Reads a whole text file, normalizing nothing: caller sees bytes as stored.
std::string read_file(const std::string& path);

// Writes atomically: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& content);

// Splits file content into lines at '\n', dropping one trailing empty line.
// Rejects '\r' anywhere (formats are LF-only).
std::vector<std::string_view> split_lines(std::string_view content);

}  // namespace fnirs::csv
