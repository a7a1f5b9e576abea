#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace xtod::textnorm {

// UTF-8 <-> codepoint helpers. Invalid byte sequences decode to U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view s);
std::string encode_utf8(const std::vector<char32_t>& cps);
void append_utf8(std::string& out, char32_t cp);

bool is_space(char32_t cp);

// True for scripts written without word delimiters (Han, Kana, and the
// CJK punctuation/compatibility blocks). Used by the tokenizer to split
// such characters into standalone words.
bool is_unspaced_script(char32_t cp);

// Compatibility normalization: fullwidth/halfwidth forms folded to their
// ASCII counterparts, Unicode space variants folded to U+0020, common
// Latin ligatures expanded. This is the subset of NFKC that matters for
// machine-translated dialog text in Latin, Cyrillic, Arabic and Han
// scripts; combining-sequence composition is not performed (inputs are
// assumed precomposed, which holds for MT output and subtitle corpora).
std::string fold_compat(std::string_view s);

// Case folding for alphabetic scripts: ASCII, Latin-1 supplement,
// Latin Extended-A and Cyrillic. Maps U+00DF ess-zed to "ss".
std::string fold_case(std::string_view s);

// Strips leading/trailing Unicode whitespace.
std::string trim(std::string_view s);

// Collapses internal whitespace runs to a single U+0020 and trims.
std::string collapse_ws(std::string_view s);

// Canonical comparison form: fold_compat, then trim, then fold_case.
std::string normalize_for_compare(std::string_view s);

// Canonical tokenizer input form: fold_compat + collapse_ws (case kept).
std::string normalize_for_tokens(std::string_view s);

// True if `needle` occurs in `haystack` after normalize_for_compare on both.
bool contains_normalized(std::string_view haystack, std::string_view needle);

}  // namespace xtod::textnorm
