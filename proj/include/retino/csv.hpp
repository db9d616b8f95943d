#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace retino::csv {

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines). Returns
/// nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_line(std::string_view line);

/// Quotes a field only when it needs it.
std::string quote(std::string_view field);

std::string join(const std::vector<std::string>& fields);

}  // namespace retino::csv
