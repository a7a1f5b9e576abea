#include "xtod/textnorm.hpp"

#include <array>

namespace xtod::textnorm {

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0xFFFD;
    std::size_t len = 1;
    if (c0 < 0x80) {
      cp = c0;
    } else if ((c0 & 0xE0) == 0xC0 && i + 1 < s.size()) {
      const unsigned char c1 = static_cast<unsigned char>(s[i + 1]);
      if ((c1 & 0xC0) == 0x80) {
        cp = ((c0 & 0x1Fu) << 6) | (c1 & 0x3Fu);
        len = 2;
        if (cp < 0x80) cp = 0xFFFD;  // overlong
      }
    } else if ((c0 & 0xF0) == 0xE0 && i + 2 < s.size()) {
      const unsigned char c1 = static_cast<unsigned char>(s[i + 1]);
      const unsigned char c2 = static_cast<unsigned char>(s[i + 2]);
      if ((c1 & 0xC0) == 0x80 && (c2 & 0xC0) == 0x80) {
        cp = ((c0 & 0x0Fu) << 12) | ((c1 & 0x3Fu) << 6) | (c2 & 0x3Fu);
        len = 3;
        if (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
      }
    } else if ((c0 & 0xF8) == 0xF0 && i + 3 < s.size()) {
      const unsigned char c1 = static_cast<unsigned char>(s[i + 1]);
      const unsigned char c2 = static_cast<unsigned char>(s[i + 2]);
      const unsigned char c3 = static_cast<unsigned char>(s[i + 3]);
      if ((c1 & 0xC0) == 0x80 && (c2 & 0xC0) == 0x80 && (c3 & 0xC0) == 0x80) {
        cp = ((c0 & 0x07u) << 18) | ((c1 & 0x3Fu) << 12) | ((c2 & 0x3Fu) << 6) |
             (c3 & 0x3Fu);
        len = 4;
        if (cp < 0x10000 || cp > 0x10FFFF) cp = 0xFFFD;
      }
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size() * 2);
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

bool is_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_unspaced_script(char32_t cp) {
  return (cp >= 0x2E80 && cp <= 0x303F) ||    // CJK radicals, Kangxi, CJK punct
         (cp >= 0x3040 && cp <= 0x30FF) ||    // Hiragana, Katakana
         (cp >= 0x31C0 && cp <= 0x9FFF) ||    // CJK strokes .. unified ideographs
         (cp >= 0xF900 && cp <= 0xFAFF) ||    // CJK compatibility ideographs
         (cp >= 0xFF00 && cp <= 0xFF65) ||    // fullwidth forms (pre-folding)
         (cp >= 0x20000 && cp <= 0x2FA1F);    // extension B..F
}

namespace {

// Single-codepoint compatibility folds; multi-codepoint expansions handled
// separately in fold_compat.
char32_t fold_compat_cp(char32_t cp) {
  if (cp >= 0xFF01 && cp <= 0xFF5E) return cp - 0xFF01 + 0x21;  // fullwidth ASCII
  if (is_space(cp)) return 0x20;
  switch (cp) {
    case 0x2018: case 0x2019: return 0x27;  // curly single quotes
    case 0x201C: case 0x201D: return 0x22;  // curly double quotes
    case 0x2212: return 0x2D;               // minus sign
    default: return cp;
  }
}

}  // namespace

std::string fold_compat(std::string_view s) {
  const auto cps = decode_utf8(s);
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : cps) {
    switch (cp) {
      case 0xFB00: out += "ff"; break;
      case 0xFB01: out += "fi"; break;
      case 0xFB02: out += "fl"; break;
      case 0xFB03: out += "ffi"; break;
      case 0xFB04: out += "ffl"; break;
      case 0x2026: out += "..."; break;  // horizontal ellipsis
      default: append_utf8(out, fold_compat_cp(cp)); break;
    }
  }
  return out;
}

std::string fold_case(std::string_view s) {
  const auto cps = decode_utf8(s);
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : cps) {
    if (cp >= 'A' && cp <= 'Z') {
      append_utf8(out, cp + 0x20);
    } else if (cp == 0xDF || cp == 0x1E9E) {  // ess-zed, capital ess-zed
      out += "ss";
    } else if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) {  // Latin-1 capitals
      append_utf8(out, cp + 0x20);
    } else if (cp >= 0x100 && cp <= 0x137 && (cp % 2 == 0)) {  // Latin Ext-A (even capitals)
      append_utf8(out, cp == 0x130 ? 0x69 : cp + 1);
    } else if (cp >= 0x139 && cp <= 0x147 && (cp % 2 == 1)) {  // Ĺ..Ň (odd capitals)
      append_utf8(out, cp + 1);
    } else if (cp >= 0x14A && cp <= 0x176 && (cp % 2 == 0)) {
      append_utf8(out, cp + 1);
    } else if (cp == 0x178) {  // Ÿ
      append_utf8(out, 0xFF);
    } else if (cp >= 0x179 && cp <= 0x17D && (cp % 2 == 1)) {  // Ź..Ž
      append_utf8(out, cp + 1);
    } else if (cp >= 0x410 && cp <= 0x42F) {  // Cyrillic А..Я
      append_utf8(out, cp + 0x20);
    } else if (cp >= 0x400 && cp <= 0x40F) {  // Cyrillic Ѐ..Џ (incl. Ё)
      append_utf8(out, cp + 0x50);
    } else {
      append_utf8(out, cp);
    }
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto cps = decode_utf8(s);
  std::size_t b = 0, e = cps.size();
  while (b < e && is_space(cps[b])) ++b;
  while (e > b && is_space(cps[e - 1])) --e;
  return encode_utf8({cps.begin() + b, cps.begin() + e});
}

std::string collapse_ws(std::string_view s) {
  const auto cps = decode_utf8(s);
  std::vector<char32_t> out;
  out.reserve(cps.size());
  bool in_ws = false;
  for (char32_t cp : cps) {
    if (is_space(cp)) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out.push_back(0x20);
    in_ws = false;
    out.push_back(cp);
  }
  return encode_utf8(out);
}

std::string normalize_for_compare(std::string_view s) {
  return fold_case(trim(fold_compat(s)));
}

std::string normalize_for_tokens(std::string_view s) {
  return collapse_ws(fold_compat(s));
}

bool contains_normalized(std::string_view haystack, std::string_view needle) {
  const std::string h = normalize_for_compare(haystack);
  const std::string n = normalize_for_compare(needle);
  if (n.empty()) return true;
  return h.find(n) != std::string::npos;
}

}  // namespace xtod::textnorm
