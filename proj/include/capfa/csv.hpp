#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace capfa::csv {

using Row = std::vector<std::string>;

// RFC 4180-style parsing: quoted fields, doubled quotes, CRLF tolerated.
// Blank lines are skipped.
std::vector<Row> parse(std::string_view text);

std::vector<Row> read_file(const std::filesystem::path& path);

// Quotes a field only when it contains a separator, quote or newline.
std::string escape(std::string_view field);

std::string join(const Row& fields);

// Shortest representation that parses back to the same double.
std::string format_double(double value);

double parse_double(std::string_view text, bool& ok);

std::string trim(std::string_view s);

}  // namespace capfa::csv
