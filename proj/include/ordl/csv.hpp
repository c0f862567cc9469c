#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ordl::csv {

/// Splits one line on commas. Fields may be double-quoted with "" escapes.
std::vector<std::string> split_line(std::string_view line);

/// Quotes a field only when it contains a comma, quote or newline.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

/// Shortest round-trip decimal form; empty for NaN.
std::string number(double value);

/// Calls fn(fields, line_number) for each non-blank line.
void for_each_row(const std::filesystem::path& path,
                  const std::function<void(const std::vector<std::string>&, std::size_t)>& fn);

}  // namespace ordl::csv
