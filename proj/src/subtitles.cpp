#include "xtod/subtitles.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "xtod/rng.hpp"
#include "xtod/textnorm.hpp"

namespace xtod::subtitles {

std::vector<ParallelUtterancePair> load_parallel_pairs(std::istream& input) {
  std::vector<ParallelUtterancePair> out;
  std::set<std::pair<std::string, int>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(input, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 4) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    ParallelUtterancePair p;
    p.imdb_id = fields[0];
    const auto [ptr, ec] =
        std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), p.line_index);
    if (ec != std::errc{} || ptr != fields[1].data() + fields[1].size() || p.line_index < 0) {
      throw ParseError("line " + std::to_string(line_no) + ": bad line_index '" + fields[1] + "'",
                       line_no);
    }
    p.src_text = fields[2];
    p.tgt_text = fields[3];
    if (p.imdb_id.empty() || textnorm::trim(p.src_text).empty() ||
        textnorm::trim(p.tgt_text).empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty field", line_no);
    }
    if (!seen.insert({p.imdb_id, p.line_index}).second) {
      throw ValidationError("duplicate key (" + p.imdb_id + ", " + std::to_string(p.line_index) +
                                ")",
                            p.imdb_id, "unique_line_keys");
    }
    out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.imdb_id, a.line_index) < std::tie(b.imdb_id, b.line_index);
  });
  return out;
}

std::vector<ParallelUtterancePair> load_parallel_pairs_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open parallel pair file " + path);
  return load_parallel_pairs(in);
}

void write_parallel_pairs(std::ostream& out, const std::vector<ParallelUtterancePair>& pairs) {
  for (const auto& p : pairs) {
    out << p.imdb_id << '\t' << p.line_index << '\t' << p.src_text << '\t' << p.tgt_text << '\n';
  }
}

std::vector<ParallelDialog> segment_dialogs(const std::vector<ParallelUtterancePair>& pairs,
                                            int min_len, int max_len, std::uint64_t seed,
                                            SegmentReport* report, unsigned threads) {
  if (min_len < 2 || min_len > max_len) {
    throw ValidationError("segment_dialogs requires 2 <= min_len <= max_len", "",
                          "window_bounds");
  }
  // Movies in sorted order; within a movie, maximal runs of consecutive
  // line_index values form the segmentable units.
  std::vector<std::pair<std::size_t, std::size_t>> movie_ranges;  // [begin, end)
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].imdb_id == pairs[i].imdb_id) ++j;
    movie_ranges.emplace_back(i, j);
    i = j;
  }

  SegmentReport rep;
  rep.pairs_total = pairs.size();
  std::vector<std::vector<ParallelDialog>> per_movie(movie_ranges.size());
  std::vector<char> skipped(movie_ranges.size(), 0);

  rng::parallel_for(movie_ranges.size(), threads, [&](std::size_t m) {
    const auto [begin, end] = movie_ranges[m];
    const std::string& imdb = pairs[begin].imdb_id;
    rng::Rng rng(rng::derive(seed, "segment", imdb, 0));
    bool any_window = false;
    std::size_t run_begin = begin;
    while (run_begin < end) {
      std::size_t run_end = run_begin + 1;
      while (run_end < end && pairs[run_end].line_index == pairs[run_end - 1].line_index + 1) {
        ++run_end;
      }
      std::size_t cursor = run_begin;
      while (run_end - cursor >= static_cast<std::size_t>(min_len)) {
        const std::size_t remaining = run_end - cursor;
        std::size_t len;
        if (remaining <= static_cast<std::size_t>(max_len)) {
          len = remaining;
        } else {
          len = static_cast<std::size_t>(rng.uniform_int(min_len, max_len));
        }
        ParallelDialog d;
        d.imdb_id = imdb;
        d.pairs.assign(pairs.begin() + cursor, pairs.begin() + cursor + len);
        per_movie[m].push_back(std::move(d));
        cursor += len;
        any_window = true;
      }
      run_begin = run_end;
    }
    skipped[m] = any_window ? 0 : 1;
  });

  std::vector<ParallelDialog> out;
  for (std::size_t m = 0; m < per_movie.size(); ++m) {
    rep.movies_processed += 1;
    rep.movies_skipped += skipped[m];
    for (auto& d : per_movie[m]) {
      rep.pairs_used += d.size();
      out.push_back(std::move(d));
    }
  }
  if (report != nullptr) *report = rep;
  return out;
}

FlatCorpus sample_flat_corpus(const std::map<std::string, std::vector<std::string>>& pools,
                              FlatCorpusKind kind, std::size_t sample_size, std::uint64_t seed,
                              const std::string& source_language) {
  const std::size_t expected_langs = kind == FlatCorpusKind::mono_cc  ? 1
                                     : kind == FlatCorpusKind::bi_cc ? 2
                                                                      : 5;
  if (pools.size() != expected_langs) {
    throw ValidationError("flat corpus kind expects " + std::to_string(expected_langs) +
                              " language pools, got " + std::to_string(pools.size()),
                          "", "language_count");
  }
  if (kind == FlatCorpusKind::bi_cc && pools.find(source_language) == pools.end()) {
    throw ValidationError("bi_cc pools must include the source language '" + source_language + "'",
                          source_language, "bi_includes_source");
  }
  FlatCorpus corpus;
  corpus.kind = kind;
  for (const auto& [lang, pool] : pools) {
    if (pool.size() < sample_size) {
      throw ValidationError("pool for '" + lang + "' has " + std::to_string(pool.size()) +
                                " sentences, need " + std::to_string(sample_size) +
                                " (short by " + std::to_string(sample_size - pool.size()) + ")",
                            lang, "pool_size");
    }
    corpus.languages.push_back(lang);
    rng::Rng rng(rng::derive(seed, "flat_corpus", lang, 0));
    for (std::size_t idx : rng.sample_indices(pool.size(), sample_size)) {
      corpus.sentences.emplace_back(lang, pool[idx]);
    }
  }
  return corpus;
}

void write_flat_corpus(std::ostream& out, const FlatCorpus& corpus) {
  for (const auto& [lang, text] : corpus.sentences) out << lang << '\t' << text << '\n';
}

FlatCorpus read_flat_corpus(std::istream& input) {
  FlatCorpus corpus;
  std::set<std::string> langs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(input, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": missing language tag column",
                       line_no);
    }
    std::string lang = line.substr(0, tab);
    if (langs.insert(lang).second) corpus.languages.push_back(lang);
    corpus.sentences.emplace_back(std::move(lang), line.substr(tab + 1));
  }
  corpus.kind = corpus.languages.size() == 1   ? FlatCorpusKind::mono_cc
                : corpus.languages.size() == 2 ? FlatCorpusKind::bi_cc
                                               : FlatCorpusKind::multi_cc;
  return corpus;
}

}  // namespace xtod::subtitles
