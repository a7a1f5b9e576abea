#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "xtod/errors.hpp"

namespace xtod::subtitles {

// One aligned subtitle line: source-language text plus its translation.
struct ParallelUtterancePair {
  std::string imdb_id;
  int line_index = 0;
  std::string src_text;
  std::string tgt_text;

  bool operator==(const ParallelUtterancePair&) const = default;
};

// A window of consecutive lines from one movie.
struct ParallelDialog {
  std::string imdb_id;
  std::vector<ParallelUtterancePair> pairs;

  int first_line() const { return pairs.front().line_index; }
  int last_line() const { return pairs.back().line_index; }
  std::size_t size() const { return pairs.size(); }
};

enum class FlatCorpusKind { mono_cc, bi_cc, multi_cc };

struct FlatCorpus {
  FlatCorpusKind kind = FlatCorpusKind::mono_cc;
  std::vector<std::string> languages;
  std::vector<std::pair<std::string, std::string>> sentences;  // (language, text)
};

// Reads the normalized parallel record format: one record per line,
// imdb_id <TAB> line_index <TAB> src_text <TAB> tgt_text, UTF-8.
// Returns pairs grouped by imdb_id (ascending) and sorted by line_index.
// Duplicate (imdb_id, line_index) keys and missing fields are errors.
std::vector<ParallelUtterancePair> load_parallel_pairs(std::istream& input);
std::vector<ParallelUtterancePair> load_parallel_pairs_file(const std::string& path);
void write_parallel_pairs(std::ostream& out, const std::vector<ParallelUtterancePair>& pairs);

struct SegmentReport {
  std::size_t movies_processed = 0;
  std::size_t movies_skipped = 0;  // shorter than min_len
  std::size_t pairs_total = 0;
  std::size_t pairs_used = 0;
};

// Carves each movie's consecutive line runs into non-overlapping windows of
// length in [min_len, max_len]. A remainder that fits within max_len is
// taken whole; otherwise the window length is drawn uniformly from
// [min_len, max_len] with a per-movie seed, so parallel runs match serial
// runs. Movies shorter than min_len are skipped and counted.
std::vector<ParallelDialog> segment_dialogs(const std::vector<ParallelUtterancePair>& pairs,
                                            int min_len, int max_len, std::uint64_t seed,
                                            SegmentReport* report = nullptr,
                                            unsigned threads = 1);

// Uniform sample of `sample_size` sentences per language, without
// replacement, deterministic via per-language derived seeds. Pool languages
// must match the corpus kind: mono_cc one language, bi_cc two including
// `source_language`, multi_cc five.
FlatCorpus sample_flat_corpus(const std::map<std::string, std::vector<std::string>>& pools,
                              FlatCorpusKind kind, std::size_t sample_size, std::uint64_t seed,
                              const std::string& source_language = "en");

// Flat corpus file: language tag <TAB> sentence, one per line.
void write_flat_corpus(std::ostream& out, const FlatCorpus& corpus);
FlatCorpus read_flat_corpus(std::istream& input);

}  // namespace xtod::subtitles
