#pragma once

// Text hygiene for model output: fences, embedded JSON, stray quotes.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace oversight::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);
// Lowercase, collapse runs of whitespace to one space, trim.
std::string normalize_ws(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Removes ``` fences (with optional language tag) and returns the inner text.
std::string strip_code_fences(std::string_view s);

// First balanced top-level {...} object, honouring string literals.
std::optional<std::string> extract_json_object(std::string_view s);

// Escapes double quotes that sit inside a string literal but do not close it,
// i.e. a quote not followed (after spaces) by one of , } ] :
std::string repair_interior_quotes(std::string_view s);

// Shortest round-trippable decimal rendering.
std::string format_double(double v);

}  // namespace oversight::text
