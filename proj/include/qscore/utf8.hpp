#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Minimal UTF-8 helpers. Invalid byte sequences decode to U+FFFD one byte at a
// time so that counting and lowercasing never fail.
namespace qscore::utf8 {

std::vector<char32_t> decode(std::string_view text);
void append(std::string& out, char32_t cp);
std::string encode(const std::vector<char32_t>& cps);

/// Number of Unicode scalar values in `text`.
std::size_t scalar_count(std::string_view text);

/// Simple case folding: ASCII, Latin-1, Latin Extended-A, Greek and Cyrillic.
char32_t to_lower(char32_t cp);
std::string to_lower(std::string_view text);

bool is_whitespace(char32_t cp);
inline bool is_ascii_punct(char32_t cp) {
  return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
         (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
}

}  // namespace qscore::utf8
