#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nmt {

// Unicode general category P (any punctuation).
bool is_punctuation(char32_t cp);

std::string trim(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);
std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

// UTF-8 characters of a string, one string per code point. Invalid bytes are
// passed through as single-byte characters.
std::vector<std::string> utf8_chars(std::string_view text);

// Pre-BPE tokenization: whitespace split, then every punctuation character
// becomes its own token.
std::vector<std::string> tokenize(std::string_view text);
std::string tokenize_line(std::string_view text);

// Inverse of tokenize for ordinary prose: closing punctuation attaches to the
// left, opening brackets to the right, and apostrophes or hyphens between
// letters join both sides.
std::string detokenize(const std::vector<std::string>& tokens);

// Lowercase and delete every punctuation character, then collapse whitespace.
std::string eval_normalize(std::string_view text);

// Built-in English contraction table (lowercase, ASCII apostrophe).
const std::vector<std::pair<std::string, std::string>>& contraction_table();

// Replaces every word found in the contraction table by its expansion,
// matching case-insensitively and accepting both ' and U+2019. Capitalized
// words get a capitalized expansion; all-caps words an all-caps one.
std::string expand_contractions(std::string_view text);

}  // namespace nmt
