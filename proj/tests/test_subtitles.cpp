#include <set>
#include <sstream>

#include "doctest.h"
#include "xtod/subtitles.hpp"

using namespace xtod;
using namespace xtod::subtitles;

namespace {

// The four-line EN-ZH dialog from the tt movie fixture.
const char* kFourPairs =
    "tt0319262\t0\t- Professor Hall. - Yes. - I think your theory may be correct. - Walk with me.\t"
    "-霍尔教授 -是的 -我认为你的理论正确 -跟我来\n"
    "tt0319262\t1\tJust a few weeks ago, I monitored the strongest hurricane on record.\t"
    "上周我观测到史上最大的飓风\n"
    "tt0319262\t2\tThe hail, the tornados, it all fits.\t雹暴和龙卷风也符合你的理论\n"
    "tt0319262\t3\tCan your model factor in storm scenarios?\t你能预测暴风雨的形成吗？\n";

std::vector<ParallelUtterancePair> consecutive_pairs(const std::string& imdb, int n,
                                                     int first = 0) {
  std::vector<ParallelUtterancePair> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({imdb, first + i, "src " + std::to_string(first + i),
                   "tgt " + std::to_string(first + i)});
  }
  return out;
}

}  // namespace

TEST_CASE("load four records in order") {
  std::istringstream in(kFourPairs);
  const auto pairs = load_parallel_pairs(in);
  REQUIRE(pairs.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(pairs[i].imdb_id == "tt0319262");
    CHECK(pairs[i].line_index == i);
  }
  CHECK(pairs[3].tgt_text == "你能预测暴风雨的形成吗？");
}

TEST_CASE("single record loads as a singleton") {
  std::istringstream in("tt1\t0\thello\t你好\n");
  const auto pairs = load_parallel_pairs(in);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].src_text == "hello");
}

TEST_CASE("duplicate keys are rejected with the key named") {
  std::istringstream in("tt1\t0\ta\tb\ntt1\t0\tc\td\n");
  try {
    load_parallel_pairs(in);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("tt1") != std::string::npos);
    CHECK(std::string(e.what()).find("0") != std::string::npos);
  }
}

TEST_CASE("missing field reports the line number") {
  std::istringstream in("tt1\t0\ta\tb\ntt1\t1\tmissing-target\n");
  try {
    load_parallel_pairs(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset == 2);  // line number
  }
}

TEST_CASE("parallel pair file round trips") {
  std::istringstream in(kFourPairs);
  const auto pairs = load_parallel_pairs(in);
  std::ostringstream out;
  write_parallel_pairs(out, pairs);
  CHECK(out.str() == kFourPairs);
}

TEST_CASE("segmentation: exact division") {
  const auto pairs = consecutive_pairs("tt1", 10);
  const auto dialogs = segment_dialogs(pairs, 5, 5, 42);
  REQUIRE(dialogs.size() == 2);
  CHECK(dialogs[0].size() == 5);
  CHECK(dialogs[1].size() == 5);
  CHECK(dialogs[0].first_line() == 0);
  CHECK(dialogs[1].first_line() == 5);
}

TEST_CASE("segmentation: short movie becomes one whole window") {
  std::istringstream in(kFourPairs);
  const auto pairs = load_parallel_pairs(in);
  const auto dialogs = segment_dialogs(pairs, 2, 15, 7);
  REQUIRE(dialogs.size() == 1);
  CHECK(dialogs[0].size() == 4);
}

TEST_CASE("segmentation: below minimum is skipped and counted") {
  const auto pairs = consecutive_pairs("tt1", 1);
  SegmentReport report;
  const auto dialogs = segment_dialogs(pairs, 2, 15, 7, &report);
  CHECK(dialogs.empty());
  CHECK(report.movies_skipped == 1);
  CHECK(report.movies_processed == 1);
  CHECK(report.pairs_used == 0);
}

TEST_CASE("segmentation never spans line-index gaps") {
  auto pairs = consecutive_pairs("tt1", 6);
  auto tail = consecutive_pairs("tt1", 6, 100);  // gap between 5 and 100
  pairs.insert(pairs.end(), tail.begin(), tail.end());
  const auto dialogs = segment_dialogs(pairs, 2, 15, 3);
  REQUIRE(dialogs.size() == 2);
  for (const auto& d : dialogs) {
    for (std::size_t i = 1; i < d.pairs.size(); ++i) {
      CHECK(d.pairs[i].line_index == d.pairs[i - 1].line_index + 1);
    }
  }
}

TEST_CASE("segmentation windows are disjoint and within bounds") {
  std::vector<ParallelUtterancePair> pairs;
  for (int m = 0; m < 7; ++m) {
    const auto movie = consecutive_pairs("tt" + std::to_string(m), 17 + 5 * m);
    pairs.insert(pairs.end(), movie.begin(), movie.end());
  }
  SegmentReport report;
  const auto dialogs = segment_dialogs(pairs, 3, 6, 99, &report);
  std::map<std::string, std::set<int>> used;
  std::size_t total = 0;
  for (const auto& d : dialogs) {
    CHECK(d.size() >= 3);
    CHECK(d.size() <= 6);
    for (const auto& p : d.pairs) {
      CHECK(used[d.imdb_id].insert(p.line_index).second);  // no overlap
      ++total;
    }
  }
  CHECK(total <= pairs.size());
  CHECK(report.pairs_used == total);
}

TEST_CASE("segmentation is deterministic and thread-count independent") {
  std::vector<ParallelUtterancePair> pairs;
  for (int m = 0; m < 12; ++m) {
    const auto movie = consecutive_pairs("m" + std::to_string(m), 40);
    pairs.insert(pairs.end(), movie.begin(), movie.end());
  }
  const auto a = segment_dialogs(pairs, 2, 15, 5, nullptr, 1);
  const auto b = segment_dialogs(pairs, 2, 15, 5, nullptr, 1);
  const auto c = segment_dialogs(pairs, 2, 15, 5, nullptr, 8);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pairs == b[i].pairs);
    CHECK(a[i].pairs == c[i].pairs);
  }
}

TEST_CASE("flat corpus sampling: mono") {
  std::vector<std::string> pool;
  for (int i = 0; i < 150; ++i) pool.push_back("sentence " + std::to_string(i));
  const auto corpus = sample_flat_corpus({{"de", pool}}, FlatCorpusKind::mono_cc, 100, 3, "en");
  CHECK(corpus.languages == std::vector<std::string>{"de"});
  CHECK(corpus.sentences.size() == 100);
  std::set<std::string> seen;
  for (const auto& [lang, text] : corpus.sentences) {
    CHECK(lang == "de");
    CHECK(seen.insert(text).second);  // without replacement
    CHECK(std::find(pool.begin(), pool.end(), text) != pool.end());
  }
}

TEST_CASE("flat corpus sampling: zero draw") {
  const auto corpus =
      sample_flat_corpus({{"de", {"a", "b"}}}, FlatCorpusKind::mono_cc, 0, 3, "en");
  CHECK(corpus.sentences.empty());
}

TEST_CASE("flat corpus sampling: bilingual counts") {
  std::vector<std::string> en, de;
  for (int i = 0; i < 10; ++i) {
    en.push_back("en " + std::to_string(i));
    de.push_back("de " + std::to_string(i));
  }
  const auto corpus =
      sample_flat_corpus({{"en", en}, {"de", de}}, FlatCorpusKind::bi_cc, 3, 11, "en");
  CHECK(corpus.sentences.size() == 6);
  std::map<std::string, int> counts;
  for (const auto& [lang, text] : corpus.sentences) ++counts[lang];
  CHECK(counts["en"] == 3);
  CHECK(counts["de"] == 3);

  // Deterministic given the seed.
  const auto again =
      sample_flat_corpus({{"en", en}, {"de", de}}, FlatCorpusKind::bi_cc, 3, 11, "en");
  CHECK(again.sentences == corpus.sentences);
}

TEST_CASE("flat corpus sampling errors") {
  // Pool too small reports the shortfall.
  try {
    sample_flat_corpus({{"de", {"a"}}}, FlatCorpusKind::mono_cc, 3, 1, "en");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("short by 2") != std::string::npos);
  }
  // bi_cc must include the source language.
  CHECK_THROWS_AS(
      sample_flat_corpus({{"de", {"a"}}, {"ru", {"b"}}}, FlatCorpusKind::bi_cc, 1, 1, "en"),
      ValidationError);
  // Language count must match the kind.
  CHECK_THROWS_AS(sample_flat_corpus({{"de", {"a"}}, {"en", {"b"}}}, FlatCorpusKind::mono_cc, 1, 1,
                                     "en"),
                  ValidationError);
}

TEST_CASE("flat corpus file round trips") {
  FlatCorpus corpus;
  corpus.kind = FlatCorpusKind::bi_cc;
  corpus.languages = {"en", "zh"};
  corpus.sentences = {{"en", "hello there"}, {"zh", "你好"}};
  std::ostringstream out;
  write_flat_corpus(out, corpus);
  std::istringstream in(out.str());
  const auto back = read_flat_corpus(in);
  CHECK(back.sentences == corpus.sentences);
  CHECK(back.languages == corpus.languages);
  CHECK(back.kind == FlatCorpusKind::bi_cc);
}
