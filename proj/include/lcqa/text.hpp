#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lcqa::util {

/// Lexical analysis shared by the sparse retriever, the stub embedders and
/// the text metrics: lowercase, split on non-alphanumerics, keep numerals.
std::vector<std::string> lex_terms(std::string_view text);

/// Collapses every whitespace run to a single space and trims the ends.
std::string collapse_whitespace(std::string_view text);

std::string trim(std::string_view text);

std::string to_lower(std::string_view text);

}  // namespace lcqa::util
