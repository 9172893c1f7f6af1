#pragma once

#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared by the prompt, metric and dataset code.
namespace vqa::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Collapses runs of spaces/tabs/newlines into one space and trims the ends.
std::string collapse_spaces(std::string_view s);

/// Replaces newlines with spaces and collapses whitespace.
std::string single_line(std::string_view s);

bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Splits on '.', '!' or '?' when followed by whitespace or end of text.
/// Sentences keep their terminating punctuation and are trimmed.
std::vector<std::string> split_sentences(std::string_view s);

std::string first_line(std::string_view s);

std::size_t word_count(std::string_view s);

}  // namespace vqa::text
