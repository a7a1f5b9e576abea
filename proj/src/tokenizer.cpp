#include "xtod/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "xtod/textnorm.hpp"

namespace xtod::tokenizer {

namespace tn = textnorm;

Vocab::Vocab(std::vector<std::string> subwords) : subwords_(std::move(subwords)) {
  index_.reserve(subwords_.size());
  for (std::size_t i = 0; i < subwords_.size(); ++i) {
    const std::string& sw = subwords_[i];
    if (sw.empty()) throw ValidationError("empty subword at id " + std::to_string(i + kNumSpecials));
    if (!index_.emplace(sw, kNumSpecials + static_cast<int>(i)).second) {
      throw ValidationError("duplicate subword '" + sw + "'");
    }
    max_piece_cps_ = std::max(max_piece_cps_, tn::decode_utf8(sw).size());
  }
}

const std::string& Vocab::piece(int id) const {
  if (id >= 0 && id < kNumSpecials) {
    static const std::string names[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    return names[id];
  }
  const int i = id - kNumSpecials;
  if (i < 0 || i >= static_cast<int>(subwords_.size())) {
    throw ValidationError("token id " + std::to_string(id) + " out of range");
  }
  return subwords_[i];
}

int Vocab::id_of(const std::string& piece) const {
  const auto it = index_.find(piece);
  return it == index_.end() ? kUnk : it->second;
}

namespace {

// A word is a maximal run of codepoints between whitespace, except that each
// unspaced-script character is a word of its own. `spaced_before` records
// whether actual whitespace preceded the word in the source text.
struct Word {
  std::vector<char32_t> cps;
  bool spaced_before = false;
};

std::vector<Word> split_words(const std::string& normalized) {
  std::vector<Word> words;
  bool pending_space = false;
  std::vector<char32_t> current;
  auto flush = [&] {
    if (current.empty()) return;
    words.push_back({current, pending_space && !words.empty()});
    pending_space = false;
    current.clear();
  };
  for (char32_t cp : tn::decode_utf8(normalized)) {
    if (tn::is_space(cp)) {
      flush();
      pending_space = true;
    } else if (tn::is_unspaced_script(cp)) {
      flush();
      const bool spaced = pending_space;
      words.push_back({{cp}, spaced && !words.empty()});
      pending_space = false;
    } else {
      current.push_back(cp);
    }
  }
  flush();
  return words;
}

std::string cps_to_utf8(const std::vector<char32_t>& cps, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) tn::append_utf8(out, cps[i]);
  return out;
}

}  // namespace

Vocab build_vocab(const std::vector<std::string>& corpus, int target_size) {
  if (target_size < kNumSpecials + 1) {
    throw ValidationError("target_size " + std::to_string(target_size) +
                          " leaves no room after the " + std::to_string(kNumSpecials) +
                          " reserved ids");
  }
  // Word frequencies over the normalized corpus; remember whether any
  // whitespace separated words (then " " is a needed fallback piece).
  std::map<std::string, long> word_freq;
  long space_freq = 0;
  for (const auto& sentence : corpus) {
    const std::string norm = tn::normalize_for_tokens(sentence);
    for (const Word& w : split_words(norm)) {
      ++word_freq[cps_to_utf8(w.cps, 0, w.cps.size())];
      if (w.spaced_before) ++space_freq;
    }
  }
  if (word_freq.empty()) throw ValidationError("build_vocab: empty corpus");

  // Represent each distinct word as a symbol sequence, initially characters.
  std::vector<std::vector<std::string>> words;
  std::vector<long> freqs;
  std::map<std::string, long> char_freq;
  for (const auto& [word, freq] : word_freq) {
    std::vector<std::string> syms;
    for (char32_t cp : tn::decode_utf8(word)) {
      std::string c;
      tn::append_utf8(c, cp);
      char_freq[c] += freq;
      syms.push_back(std::move(c));
    }
    words.push_back(std::move(syms));
    freqs.push_back(freq);
  }

  std::vector<std::string> pieces;
  for (const auto& [c, f] : char_freq) pieces.push_back(c);

  // target_size budgets the reserved ids, character fallbacks and merges;
  // the inter-word space piece is added afterwards (it exists so decoding
  // can restore spacing, not as a learned unit).
  auto vocab_size = [&] { return kNumSpecials + static_cast<int>(pieces.size()); };

  while (vocab_size() < target_size) {
    std::map<std::pair<std::string, std::string>, long> pair_freq;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& syms = words[w];
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        pair_freq[{syms[i], syms[i + 1]}] += freqs[w];
      }
    }
    // Highest frequency wins; ties break on the lexicographically smallest pair.
    std::pair<std::string, std::string> best;
    long best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq) {
        best = pair;
        best_freq = freq;
      }
    }
    if (best_freq < 2) break;  // singleton merges do not generalize

    const std::string merged = best.first + best.second;
    for (auto& syms : words) {
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size();) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(syms[i]);
          ++i;
        }
      }
      syms = std::move(next);
    }
    pieces.push_back(merged);
  }
  if (space_freq > 0) pieces.push_back(" ");

  // Rank by realized frequency under greedy segmentation with the final set,
  // ties lexicographic. Unused pieces keep rank by (0, lex).
  Vocab draft(pieces);
  std::map<std::string, long> piece_freq;
  for (const auto& p : pieces) piece_freq[p] = 0;
  if (space_freq > 0) piece_freq[" "] = space_freq;
  for (const auto& [word, freq] : word_freq) {
    for (int id : tokenize(word, draft)) {
      if (id >= kNumSpecials) piece_freq[draft.piece(id)] += freq;
    }
  }
  std::sort(pieces.begin(), pieces.end(), [&](const std::string& a, const std::string& b) {
    const long fa = piece_freq[a], fb = piece_freq[b];
    if (fa != fb) return fa > fb;
    return a < b;
  });
  return Vocab(pieces);
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  const std::string norm = tn::normalize_for_tokens(text);
  std::vector<int> ids;
  const int space_id = vocab.contains(" ") ? vocab.id_of(" ") : kUnk;
  for (const Word& w : split_words(norm)) {
    if (w.spaced_before) ids.push_back(space_id);
    std::size_t pos = 0;
    while (pos < w.cps.size()) {
      // Greedy longest match bounded by the longest piece in the vocab.
      const std::size_t cap = std::min(w.cps.size(), pos + vocab.max_piece_cps());
      int matched_id = -1;
      std::size_t matched_len = 0;
      for (std::size_t end = cap; end > pos; --end) {
        const std::string candidate = cps_to_utf8(w.cps, pos, end);
        if (vocab.contains(candidate)) {
          matched_id = vocab.id_of(candidate);
          matched_len = end - pos;
          break;
        }
      }
      if (matched_id < 0) {
        ids.push_back(kUnk);
        pos += 1;
      } else {
        ids.push_back(matched_id);
        pos += matched_len;
      }
    }
  }
  return ids;
}

TokenSequence encode(const std::string& text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ValidationError("encode: max_len must be at least 2");
  std::vector<int> body = tokenize(text, vocab);
  TokenSequence seq;
  seq.ids.push_back(kCls);
  const std::size_t keep = std::min(body.size(), max_len - 2);
  seq.ids.insert(seq.ids.end(), body.begin(), body.begin() + keep);
  seq.ids.push_back(kSep);
  seq.type_ids.assign(seq.ids.size(), 0);
  return seq;
}

TokenSequence encode_pair(const std::string& context, const std::string& response,
                          const Vocab& vocab, std::size_t per_side_max) {
  if (per_side_max < 2) throw ValidationError("encode_pair: per_side_max must be at least 2");
  std::vector<int> ctx = tokenize(context, vocab);
  std::vector<int> resp = tokenize(response, vocab);
  TokenSequence seq;
  // Context side: [CLS] tokens [SEP], at most per_side_max positions.
  seq.ids.push_back(kCls);
  const std::size_t ctx_keep = std::min(ctx.size(), per_side_max - 2);
  seq.ids.insert(seq.ids.end(), ctx.begin(), ctx.begin() + ctx_keep);
  seq.ids.push_back(kSep);
  seq.type_ids.assign(seq.ids.size(), 0);
  // Response side: tokens [SEP], at most per_side_max positions, type 1.
  const std::size_t resp_keep = std::min(resp.size(), per_side_max - 1);
  seq.ids.insert(seq.ids.end(), resp.begin(), resp.begin() + resp_keep);
  seq.ids.push_back(kSep);
  seq.type_ids.resize(seq.ids.size(), 1);
  return seq;
}

std::string decode(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (int id : seq.ids) {
    if (vocab.is_special(id)) continue;
    out += vocab.piece(id);
  }
  return out;
}

void write_vocab(std::ostream& out, const Vocab& vocab) {
  for (const auto& sw : vocab.subwords()) out << sw << '\n';
}

Vocab read_vocab(std::istream& input) {
  std::vector<std::string> subwords;
  std::string line;
  while (std::getline(input, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;  // blank lines are not valid subwords
    subwords.push_back(line);
  }
  return Vocab(std::move(subwords));
}

Vocab read_vocab_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open vocab file " + path);
  return read_vocab(in);
}

}  // namespace xtod::tokenizer
