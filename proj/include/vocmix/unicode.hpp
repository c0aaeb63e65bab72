#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace vocmix::uni {

// Strict UTF-8 decode; rejects overlong forms, surrogates, and values past
// U+10FFFF. Throws ParseError naming the byte offset of the first bad byte.
std::u32string decode_utf8(std::string_view text);

// As above, plus the starting byte offset of each code point. byte_offsets
// has one extra trailing element equal to text.size().
struct DecodedText {
  std::u32string code_points;
  std::vector<size_t> byte_offsets;
};
DecodedText decode_utf8_with_offsets(std::string_view text);

std::string encode_utf8(std::u32string_view cps);
std::string encode_utf8(char32_t cp);

size_t count_code_points(std::string_view utf8);

// Canonical composition (NFC).
std::string nfc(std::string_view utf8);

bool is_punctuation(char32_t cp);  // Unicode general category P*
bool is_whitespace(char32_t cp);   // Unicode White_Space property
bool is_latin_or_ascii(char32_t cp);

}  // namespace vocmix::uni
