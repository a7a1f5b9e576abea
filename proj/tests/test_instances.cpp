#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "xtod/instances.hpp"
#include "xtod/textnorm.hpp"

using namespace xtod;
using namespace xtod::instances;
using namespace xtod::tokenizer;
using xtod::subtitles::ParallelDialog;
using xtod::subtitles::ParallelUtterancePair;

namespace {

Vocab tiny_vocab() {
  // Covers the sa/sb/ta/tb words and digits used by the dialog fixtures.
  return build_vocab({"aa ab ba bb ca cb cc da db", "aa ab aa ab aa",
                      "sa sb ta tb 0 1 2 3 4 5 6 7 8 9 10 11"},
                     96);
}

TokenSequence sequence_of(int n_regular, const Vocab& vocab) {
  TokenSequence seq;
  seq.ids.push_back(kCls);
  for (int i = 0; i < n_regular; ++i) {
    seq.ids.push_back(kNumSpecials + (i % (vocab.size() - kNumSpecials)));
  }
  seq.ids.push_back(kSep);
  seq.type_ids.assign(seq.ids.size(), 0);
  return seq;
}

ParallelDialog make_dialog(const std::string& imdb, int n, int first = 0) {
  ParallelDialog d;
  d.imdb_id = imdb;
  for (int i = 0; i < n; ++i) {
    d.pairs.push_back({imdb, first + i, "sa sb s" + std::to_string(first + i),
                       "ta tb t" + std::to_string(first + i)});
  }
  return d;
}

}  // namespace

TEST_CASE("mlm masks round(rate * n) positions") {
  const Vocab vocab = tiny_vocab();
  const auto seq = sequence_of(20, vocab);
  const auto inst = gen_mlm(seq, MaskingConfig{}, vocab.size(), 11);
  CHECK(inst.mlm_labels.size() == 3);  // round(0.15 * 20)
  CHECK(inst.kind == InstanceKind::mlm);
}

TEST_CASE("mlm masks at least min_masked") {
  const Vocab vocab = tiny_vocab();
  const auto seq = sequence_of(1, vocab);
  const auto inst = gen_mlm(seq, MaskingConfig{}, vocab.size(), 11);
  CHECK(inst.mlm_labels.size() == 1);  // floor would be 0
}

TEST_CASE("mlm on special-only sequence is an error") {
  const Vocab vocab = tiny_vocab();
  TokenSequence seq;
  seq.ids = {kCls, kSep};
  seq.type_ids = {0, 0};
  CHECK_THROWS_AS(gen_mlm(seq, MaskingConfig{}, vocab.size(), 1), ValidationError);
}

TEST_CASE("mlm is deterministic given the seed") {
  const Vocab vocab = tiny_vocab();
  const auto seq = sequence_of(30, vocab);
  const auto a = gen_mlm(seq, MaskingConfig{}, vocab.size(), 123);
  const auto b = gen_mlm(seq, MaskingConfig{}, vocab.size(), 123);
  CHECK(a == b);
  const auto c = gen_mlm(seq, MaskingConfig{}, vocab.size(), 124);
  CHECK(a.tokens.ids != c.tokens.ids);
}

TEST_CASE("mlm label hygiene over many random shapes") {
  const Vocab vocab = tiny_vocab();
  MaskingConfig cfg;
  for (int n = 1; n <= 40; ++n) {
    const auto seq = sequence_of(n, vocab);
    const auto inst = gen_mlm(seq, cfg, vocab.size(), 1000 + n);
    const auto expected = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(0.15 * n + 0.5)));
    CHECK(inst.mlm_labels.size() == expected);
    for (const auto& [pos, orig] : inst.mlm_labels) {
      CHECK(seq.ids[pos] >= kNumSpecials);       // never a special position
      CHECK(orig == seq.ids[pos]);               // stores the original id
      CHECK(inst.tokens.ids[pos] >= 0);
      CHECK(inst.tokens.ids[pos] != kPad);
      CHECK(inst.tokens.ids[pos] != kCls);
      CHECK(inst.tokens.ids[pos] != kSep);
    }
    // Unmasked positions are untouched.
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      if (inst.mlm_labels.count(static_cast<int>(i)) == 0) {
        CHECK(inst.tokens.ids[i] == seq.ids[i]);
      }
    }
  }
}

TEST_CASE("restore_original_ids undoes masking") {
  const Vocab vocab = tiny_vocab();
  const auto seq = sequence_of(25, vocab);
  const auto inst = gen_mlm(seq, MaskingConfig{}, vocab.size(), 5);
  CHECK(restore_original_ids(inst) == seq.ids);
}

TEST_CASE("tlm with a forced K covers the whole dialog") {
  const Vocab vocab = tiny_vocab();
  const auto pd = make_dialog("tt0319262", 4);
  TlmConfig cfg;
  cfg.k_min = 4;
  cfg.k_max = 4;
  const auto inst = gen_tlm(pd, vocab, cfg, MaskingConfig{}, 9);
  REQUIRE(inst.has_value());
  CHECK(inst->kind == InstanceKind::tlm);
  CHECK(inst->provenance.imdb_id == "tt0319262");
  CHECK(inst->provenance.line_begin == 0);
  CHECK(inst->provenance.line_end == 3);
  CHECK_FALSE(inst->mlm_labels.empty());

  // Both language sides survive masking via the stored labels.
  const auto ids = restore_original_ids(*inst);
  std::string src_side, tgt_side;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (vocab.is_special(ids[i])) continue;
    (inst->tokens.type_ids[i] == 0 ? src_side : tgt_side) += vocab.piece(ids[i]);
  }
  for (int i = 0; i < 4; ++i) {
    CHECK(src_side.find("s" + std::to_string(i)) != std::string::npos);
    CHECK(tgt_side.find("t" + std::to_string(i)) != std::string::npos);
  }
  // Masked positions hit both sides of the pair somewhere across seeds.
}

TEST_CASE("tlm on a dialog of length 2 forces K=2 at offset 0") {
  const Vocab vocab = tiny_vocab();
  const auto pd = make_dialog("tt1", 2);
  TlmConfig cfg;
  cfg.k_min = 2;
  cfg.k_max = 2;
  const auto inst = gen_tlm(pd, vocab, cfg, MaskingConfig{}, 77);
  REQUIRE(inst.has_value());
  CHECK(inst->provenance.line_begin == 0);
  CHECK(inst->provenance.line_end == 1);
}

TEST_CASE("tlm below k_min is a skip, not an error") {
  const Vocab vocab = tiny_vocab();
  const auto pd = make_dialog("tt1", 1);
  CHECK_FALSE(gen_tlm(pd, vocab, TlmConfig{}, MaskingConfig{}, 3).has_value());
}

TEST_CASE("tlm masking never labels special positions") {
  const Vocab vocab = tiny_vocab();
  const auto pd = make_dialog("tt2", 8);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto inst = gen_tlm(pd, vocab, TlmConfig{}, MaskingConfig{}, seed);
    REQUIRE(inst.has_value());
    const auto original = restore_original_ids(*inst);
    for (const auto& [pos, orig] : inst->mlm_labels) {
      CHECK(original[pos] >= kNumSpecials);
    }
  }
}

TEST_CASE("tlm alternating layout interleaves language sides") {
  const Vocab vocab = tiny_vocab();
  const auto pd = make_dialog("tt3", 3);
  TlmConfig cfg;
  cfg.k_min = 3;
  cfg.k_max = 3;
  cfg.layout = TlmLayout::alternating;
  const auto inst = gen_tlm(pd, vocab, cfg, MaskingConfig{}, 4);
  REQUIRE(inst.has_value());
  // type_ids flip more than once (per-utterance interleave, not one block).
  int flips = 0;
  for (std::size_t i = 1; i < inst->tokens.type_ids.size(); ++i) {
    if (inst->tokens.type_ids[i] != inst->tokens.type_ids[i - 1]) ++flips;
  }
  CHECK(flips >= 3);
}

TEST_CASE("rs generation honors the negative contracts") {
  const Vocab vocab = tiny_vocab();
  std::vector<ParallelDialog> pool;
  for (int m = 0; m < 6; ++m) pool.push_back(make_dialog("mv" + std::to_string(m), 10));
  RsConfig cfg;
  cfg.positives_per_dialog = 2;
  const auto batch = gen_rs(pool, vocab, cfg, 31);

  const auto counts = count_rs(batch);
  CHECK(counts.positives == 12);
  CHECK(counts.hard_negatives > 0);
  CHECK(counts.easy_negatives >= counts.positives * 1);
  CHECK(counts.easy_negatives <= counts.positives * 3);

  for (const auto& inst : batch) {
    REQUIRE(inst.kind == InstanceKind::rs);
    const auto& prov = inst.provenance;
    if (inst.rs_label) {
      // True response is the immediately following utterance.
      CHECK(prov.resp_imdb_id == prov.imdb_id);
      CHECK(prov.resp_line == prov.line_end + 1);
    } else if (prov.resp_imdb_id == prov.imdb_id) {
      // Hard negative: same movie, non-immediate.
      CHECK(prov.resp_line >= prov.line_end + 2);
    } else {
      CHECK(prov.resp_imdb_id != prov.imdb_id);
    }
  }

  // With one positive per dialog, easy-negative counts per positive are
  // directly countable and must lie in {m_min..m_max}.
  RsConfig single;
  const auto per_positive = gen_rs(pool, vocab, single, 77);
  std::map<std::string, int> easy_count;
  for (const auto& inst : per_positive) {
    if (!inst.rs_label && inst.provenance.resp_imdb_id != inst.provenance.imdb_id) {
      ++easy_count[inst.provenance.imdb_id];
    }
  }
  CHECK(easy_count.size() == pool.size());
  for (const auto& [movie, m] : easy_count) {
    CHECK(m >= 1);
    CHECK(m <= 3);
  }
}

TEST_CASE("rs modes choose the language sides") {
  const Vocab vocab = build_vocab({"sa sb sc sd ta tb tc td", "sa ta sa ta"}, 64);
  std::vector<ParallelDialog> pool = {make_dialog("m0", 6), make_dialog("m1", 6)};

  RsConfig mono;
  mono.mode = RsMode::mono;
  for (const auto& inst : gen_rs(pool, vocab, mono, 5)) {
    const std::string text = decode(inst.tokens, vocab);
    CHECK(text.find("sa") == std::string::npos);  // everything in the target language
  }

  RsConfig cross;
  cross.mode = RsMode::cross;
  for (const auto& inst : gen_rs(pool, vocab, cross, 5)) {
    std::string resp_side;
    for (std::size_t i = 0; i < inst.tokens.ids.size(); ++i) {
      if (inst.tokens.type_ids[i] == 1 && !vocab.is_special(inst.tokens.ids[i])) {
        resp_side += vocab.piece(inst.tokens.ids[i]);
      }
    }
    CHECK(resp_side.find("ta") == std::string::npos);  // responses in the source language
    CHECK(resp_side.find("sa") != std::string::npos);
  }
}

TEST_CASE("rs with a single movie cannot build easy negatives") {
  const Vocab vocab = tiny_vocab();
  std::vector<ParallelDialog> pool = {make_dialog("only", 10)};
  CHECK_THROWS_AS(gen_rs(pool, vocab, RsConfig{}, 1), ValidationError);
}

TEST_CASE("generators are deterministic and thread-count independent") {
  const Vocab vocab = tiny_vocab();
  std::vector<ParallelDialog> pool;
  for (int m = 0; m < 9; ++m) pool.push_back(make_dialog("d" + std::to_string(m), 12));

  const auto rs1 = gen_rs(pool, vocab, RsConfig{}, 8, 1);
  const auto rs8 = gen_rs(pool, vocab, RsConfig{}, 8, 8);
  CHECK(rs1 == rs8);

  const auto tlm1 = gen_tlm_batch(pool, vocab, TlmConfig{}, MaskingConfig{}, 8, 1);
  const auto tlm8 = gen_tlm_batch(pool, vocab, TlmConfig{}, MaskingConfig{}, 8, 8);
  CHECK(tlm1 == tlm8);

  std::vector<TokenSequence> seqs;
  for (int i = 1; i <= 50; ++i) seqs.push_back(sequence_of(i % 20 + 1, vocab));
  const auto mlm1 = gen_mlm_batch(seqs, MaskingConfig{}, vocab.size(), 8, 1);
  const auto mlm8 = gen_mlm_batch(seqs, MaskingConfig{}, vocab.size(), 8, 8);
  CHECK(mlm1 == mlm8);
}

TEST_CASE("instance file round trips") {
  const Vocab vocab = tiny_vocab();
  std::vector<ParallelDialog> pool = {make_dialog("x0", 8), make_dialog("x1", 8)};
  auto batch = gen_rs(pool, vocab, RsConfig{}, 21);
  const auto tlm = gen_tlm_batch(pool, vocab, TlmConfig{}, MaskingConfig{}, 22);
  batch.insert(batch.end(), tlm.begin(), tlm.end());

  std::ostringstream out;
  write_instances(out, batch);
  std::istringstream in(out.str());
  const auto back = read_instances(in);
  CHECK(back == batch);
}

TEST_CASE("masking config validation") {
  MaskingConfig bad;
  bad.replace_mask_p = 0.5;  // no longer sums to 1
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  MaskingConfig bad_rate;
  bad_rate.mask_rate = 1.5;
  CHECK_THROWS_AS(bad_rate.validate(), ValidationError);
  RsConfig bad_offset;
  bad_offset.min_hard_offset = 1;
  CHECK_THROWS_AS(bad_offset.validate(), ValidationError);
}
