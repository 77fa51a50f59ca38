#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>

namespace obench {

inline char fold_char(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  return (u >= 'A' && u <= 'Z') ? static_cast<char>(u - 'A' + 'a') : c;
}

// ASCII case fold; non-ASCII bytes pass through unchanged. All reward and
// penalty patterns in this project are ASCII, and folding byte-by-byte keeps
// offsets stable for the moderation scanners.
inline std::string fold(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), fold_char);
  return out;
}

inline bool contains_ci(std::string_view haystack, std::string_view pattern) {
  if (pattern.empty()) return true;
  return fold(haystack).find(fold(pattern)) != std::string::npos;
}

inline std::size_t count_occurrences(std::string_view text, std::string_view sub) {
  if (sub.empty()) return 0;
  std::size_t n = 0;
  std::size_t pos = 0;
  while ((pos = text.find(sub, pos)) != std::string_view::npos) {
    ++n;
    pos += sub.size();
  }
  return n;
}

// Strict UTF-8 validation (RFC 3629: no overlongs, no surrogates, max U+10FFFF).
inline bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      ++i;
      continue;
    }
    int len;
    unsigned cp;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (int k = 1; k < len; ++k) {
      unsigned char cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (len == 2 && cp < 0x80) return false;
    if (len == 3 && cp < 0x800) return false;
    if (len == 4 && cp < 0x10000) return false;
    if (cp > 0x10FFFF) return false;
    if (cp >= 0xD800 && cp <= 0xDFFF) return false;
    i += len;
  }
  return true;
}

}  // namespace obench
