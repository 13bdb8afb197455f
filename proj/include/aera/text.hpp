#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace aera::text {

std::string trim(std::string_view s);

/// Collapse every run of whitespace to one space and trim the ends.
std::string collapse_whitespace(std::string_view s);

std::string to_lower(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

bool starts_with_ci(std::string_view s, std::string_view prefix);

/// Map typographic quotes and apostrophes (U+2018..U+201F, U+00AB/BB) to
/// their ASCII counterparts and drop the stray U+201A low quote that shows up
/// in copy-pasted model output.
std::string ascii_quotes(std::string_view s);

/// Lowercase + ASCII quotes + collapsed whitespace; the comparison form used
/// for span matching and table-cell equality.
std::string normalize_for_match(std::string_view s);

/// Whitespace-separated token count; the mock provider's usage unit.
std::size_t word_count(std::string_view s);

std::string sha256_hex(std::string_view data);

}  // namespace aera::text
