#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "xtod/errors.hpp"

namespace xtod::tokenizer {

// Reserved ids occupy the first five positions of every vocabulary.
enum SpecialId : int { kPad = 0, kUnk = 1, kCls = 2, kSep = 3, kMask = 4 };
inline constexpr int kNumSpecials = 5;
inline constexpr const char* kSpecialNames[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                            "[MASK]"};

class Vocab {
 public:
  Vocab() = default;
  // Subwords in id order (id = kNumSpecials + position). Throws on empty or
  // duplicate subwords.
  explicit Vocab(std::vector<std::string> subwords);

  int size() const { return kNumSpecials + static_cast<int>(subwords_.size()); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  // id -> piece; specials render as their bracket names.
  const std::string& piece(int id) const;
  // piece -> id, or kUnk when absent.
  int id_of(const std::string& piece) const;
  bool contains(const std::string& piece) const { return index_.count(piece) > 0; }

  // Longest subword length in codepoints (greedy-match search bound).
  std::size_t max_piece_cps() const { return max_piece_cps_; }

  const std::vector<std::string>& subwords() const { return subwords_; }

 private:
  std::vector<std::string> subwords_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_piece_cps_ = 0;
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> type_ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

// Frequency-ranked subword vocabulary from iterative pair merging over
// whitespace-split words (characters of unspaced scripts count as their own
// words). Single characters are always retained as fallback; merge ties
// break lexicographically; merging stops at target_size or when no pair
// occurs at least twice. Throws on an empty corpus or target_size < 6.
Vocab build_vocab(const std::vector<std::string>& corpus, int target_size);

// Greedy longest-match encoding: [CLS] pieces [SEP], type_ids all zero.
// Unknown characters become [UNK]; truncation keeps the earliest tokens and
// always ends with [SEP]. Inter-word whitespace is encoded as the " " piece
// so that decoding restores spacing.
TokenSequence encode(const std::string& text, const Vocab& vocab, std::size_t max_len);

// [CLS] context [SEP] response [SEP]; each side independently truncated to
// per_side_max positions (specials included); type_ids are 0 on the context
// side and 1 on the response side including the final [SEP].
TokenSequence encode_pair(const std::string& context, const std::string& response,
                          const Vocab& vocab, std::size_t per_side_max);

// Concatenates non-special pieces. Inverse of encode on in-vocab,
// untruncated input (up to tokenizer normalization).
std::string decode(const TokenSequence& seq, const Vocab& vocab);

// Pieces for one text without specials (building block for encode/encode_pair).
std::vector<int> tokenize(const std::string& text, const Vocab& vocab);

// Vocab file: one subword per line; line number = id - 5.
void write_vocab(std::ostream& out, const Vocab& vocab);
Vocab read_vocab(std::istream& input);
Vocab read_vocab_file(const std::string& path);

}  // namespace xtod::tokenizer
