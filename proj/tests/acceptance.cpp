// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Criteria are pinned here, in code; nothing defers to later calibration.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "testutil.hpp"
#include "toyworld.hpp"
#include "xtod/dialog.hpp"
#include "xtod/encoder.hpp"
#include "xtod/experiment.hpp"
#include "xtod/instances.hpp"
#include "xtod/metrics.hpp"
#include "xtod/rng.hpp"
#include "xtod/subtitles.hpp"
#include "xtod/textnorm.hpp"
#include "xtod/tokenizer.hpp"

using namespace xtod;

namespace {

int g_failures = 0;

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %2d %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

bool oracle_jga_turn(const dialog::DialogState& pred, const dialog::DialogState& gold) {
  std::set<dialog::SlotKey> keys;
  for (const auto& [k, v] : pred.values) keys.insert(k);
  for (const auto& [k, v] : gold.values) keys.insert(k);
  for (const auto& k : keys) {
    std::string pv = "none", gv = "none";
    auto pit = pred.values.find(k);
    if (pit != pred.values.end()) pv = textnorm::normalize_for_compare(pit->second);
    auto git = gold.values.find(k);
    if (git != gold.values.end()) gv = textnorm::normalize_for_compare(git->second);
    if (pv != gv) return false;
  }
  return true;
}

void criterion_1() {
  Timer timer;
  rng::Rng rng(1001);
  const std::vector<dialog::SlotKey> keys = {
      {"train", "day"}, {"hotel", "area"}, {"restaurant", "food"}};
  const std::vector<std::string> values = {"none", "monday", "north", "african", "3"};

  std::size_t mismatches = 0;

  // Joint goal accuracy vs a dictionary-comparison oracle.
  for (int i = 0; i < 1000; ++i) {
    metrics::DialogPredictions pred{"D", {}}, gold{"D", {}};
    const int n_turns = 1 + static_cast<int>(rng.below(3));
    for (int t = 0; t < n_turns; ++t) {
      dialog::DialogState ps, gs;
      for (const auto& key : keys) {
        if (rng.below(2) == 0) gs.values[key] = values[rng.below(values.size())];
        const auto r = rng.below(10);
        if (r < 5 && gs.values.count(key) > 0) ps.values[key] = gs.values[key];
        else if (r < 8) ps.values[key] = values[rng.below(values.size())];
      }
      pred.turns.push_back(ps);
      gold.turns.push_back(gs);
    }
    const auto report_ = metrics::joint_goal_accuracy({pred}, {gold});
    std::size_t oracle = 0;
    for (int t = 0; t < n_turns; ++t) {
      if (oracle_jga_turn(pred.turns[t], gold.turns[t])) ++oracle;
    }
    if (report_.correct_turns != oracle) ++mismatches;
  }

  // recall_at_k vs a direct position scan.
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(12);
    std::vector<metrics::Ranking> rankings;
    const std::size_t n_ctx = 1 + rng.below(5);
    for (std::size_t c = 0; c < n_ctx; ++c) {
      metrics::Ranking r;
      r.order.resize(n);
      std::iota(r.order.begin(), r.order.end(), 0);
      rng.shuffle(r.order);
      r.true_position = rng.below(n);
      rankings.push_back(std::move(r));
    }
    const std::size_t k = 1 + rng.below(n);
    const auto rep = metrics::recall_at_k(rankings, k);
    std::size_t oracle_hits = 0;
    for (const auto& r : rankings) {
      for (std::size_t pos = 0; pos < k; ++pos) {
        if (r.order[pos] == r.true_position) {
          ++oracle_hits;
          break;
        }
      }
    }
    if (rep.hits != oracle_hits || rep.recall != static_cast<double>(oracle_hits) /
                                                     static_cast<double>(n_ctx)) {
      ++mismatches;
    }
  }

  // cohen_kappa vs brute-force contingency counting and the textbook formula.
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<int> a, b;
    for (std::size_t j = 0; j < n; ++j) {
      a.push_back(static_cast<int>(rng.below(2)));
      b.push_back(rng.below(3) == 0 ? 1 - a.back() : a.back());
    }
    const auto rep = metrics::cohen_kappa(a, b);
    std::size_t n11 = 0, n10 = 0, n01 = 0, n00 = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (a[j] == 1 && b[j] == 1) ++n11;
      if (a[j] == 1 && b[j] == 0) ++n10;
      if (a[j] == 0 && b[j] == 1) ++n01;
      if (a[j] == 0 && b[j] == 0) ++n00;
    }
    const double nn = static_cast<double>(n);
    const double po = (static_cast<double>(n11) + static_cast<double>(n00)) / nn;
    const double pa = (static_cast<double>(n11) + static_cast<double>(n10)) / nn;
    const double pb = (static_cast<double>(n11) + static_cast<double>(n01)) / nn;
    const double pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    bool ok = rep.n11 == n11 && rep.n10 == n10 && rep.n01 == n01 && rep.n00 == n00;
    if (pe >= 1.0) {
      ok = ok && (po >= 1.0 ? rep.kappa == 1.0 : rep.degenerate);
    } else {
      ok = ok && rep.kappa == (po - pe) / (1.0 - pe);
    }
    if (!ok) ++mismatches;
  }

  const double secs = timer.seconds();
  report(1, mismatches == 0 && secs < 10.0,
         "metric oracles: 3000 fixtures, " + std::to_string(mismatches) + " mismatches, " +
             fmt(secs) + "s (limit 10s)");
}

// ---------------------------------------------------------------- criterion 2

void criterion_2() {
  std::vector<int> a, b;
  for (int i = 0; i < 45; ++i) { a.push_back(1); b.push_back(1); }
  for (int i = 0; i < 45; ++i) { a.push_back(0); b.push_back(0); }
  for (int i = 0; i < 5; ++i) { a.push_back(1); b.push_back(0); }
  for (int i = 0; i < 5; ++i) { a.push_back(0); b.push_back(1); }
  const auto rep = metrics::cohen_kappa(a, b);
  const bool pass = std::abs(rep.kappa - 0.8) <= 1e-12 && rep.p_o == 0.9 && rep.p_e == 0.5;
  report(2, pass,
         "kappa(45/45/5/5) = " + fmt(rep.kappa) +
             " (0.8 +- 1e-12); reference annotation kappas 0.824/0.838 need the original "
             "annotation data, see README");
}

// ---------------------------------------------------------------- criterion 3

void criterion_3() {
  Timer timer;
  const auto vocab = tokenizer::build_vocab({"ab cd ef gh ij kl mn op qr st uv wx yz"}, 64);
  // Length-20 sequences: 20 non-special ids between [CLS] and [SEP].
  std::vector<tokenizer::TokenSequence> seqs;
  rng::Rng rng(33);
  for (int i = 0; i < 10000; ++i) {
    tokenizer::TokenSequence seq;
    seq.ids.push_back(tokenizer::kCls);
    for (int t = 0; t < 20; ++t) {
      seq.ids.push_back(tokenizer::kNumSpecials +
                        static_cast<int>(rng.below(vocab.size() - tokenizer::kNumSpecials)));
    }
    seq.ids.push_back(tokenizer::kSep);
    seq.type_ids.assign(seq.ids.size(), 0);
    seqs.push_back(std::move(seq));
  }
  const auto batch =
      instances::gen_mlm_batch(seqs, instances::MaskingConfig{}, vocab.size(), 999, 4);

  std::size_t masked = 0, non_special = 0, special_masked = 0;
  for (const auto& inst : batch) {
    masked += inst.mlm_labels.size();
    non_special += 20;
    for (const auto& [pos, orig] : inst.mlm_labels) {
      if (orig < tokenizer::kNumSpecials) ++special_masked;
      // The position in the unmasked sequence must hold a regular token.
      if (pos == 0 || pos == 21) ++special_masked;
    }
  }
  const double fraction = static_cast<double>(masked) / static_cast<double>(non_special);
  const double secs = timer.seconds();
  const bool pass =
      std::abs(fraction - 0.15) <= 0.005 && special_masked == 0 && secs < 30.0;
  report(3, pass,
         "masking: fraction " + fmt(fraction) + " (0.15 +- 0.005), special positions masked " +
             std::to_string(special_masked) + ", " + fmt(secs) + "s (limit 30s)");
}

// ---------------------------------------------------------------- criterion 4

void criterion_4() {
  Timer timer;
  // One 20-line dialog; vocabulary over every state line in both languages.
  std::vector<std::string> corpus;
  for (int s = 0; s < toyworld::kStates; ++s) {
    corpus.push_back(toyworld::line_text(s, false));
    corpus.push_back(toyworld::line_text(s, true));
    corpus.push_back(toyworld::line_text(s, false));
    corpus.push_back(toyworld::line_text(s, true));
  }
  const auto vocab = tokenizer::build_vocab(corpus, 200);

  subtitles::ParallelDialog pd;
  pd.imdb_id = "tt0000001";
  for (int i = 0; i < 20; ++i) {
    pd.pairs.push_back({pd.imdb_id, i, toyworld::line_text(i % toyworld::kStates, false),
                        toyworld::line_text(i % toyworld::kStates, true)});
  }

  std::vector<std::size_t> k_histogram(16, 0);  // K in [2, 15]
  std::size_t bad_k = 0, bad_sides = 0;
  const instances::TlmConfig cfg;
  const instances::MaskingConfig mask;
  for (int i = 0; i < 10000; ++i) {
    const auto inst = instances::gen_tlm(pd, vocab, cfg, mask, 5000 + i);
    if (!inst.has_value()) {
      ++bad_k;
      continue;
    }
    const int k = inst->provenance.line_end - inst->provenance.line_begin + 1;
    if (k < 2 || k > 15) {
      ++bad_k;
      continue;
    }
    ++k_histogram[k];

    // Restore the masked ids and compare each side against the expected join
    // of the K utterances.
    const auto ids = instances::restore_original_ids(*inst);
    std::string src_side, tgt_side;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (vocab.is_special(ids[p])) continue;
      (inst->tokens.type_ids[p] == 0 ? src_side : tgt_side) += vocab.piece(ids[p]);
    }
    std::string want_src, want_tgt;
    for (int u = inst->provenance.line_begin; u <= inst->provenance.line_end; ++u) {
      if (!want_src.empty()) want_src += ' ';
      if (!want_tgt.empty()) want_tgt += ' ';
      want_src += pd.pairs[u].src_text;
      want_tgt += pd.pairs[u].tgt_text;
    }
    if (src_side != want_src || tgt_side != want_tgt) ++bad_sides;
  }

  // Chi-squared uniformity over the 14 K values; 0.99 quantile at 13 dof.
  const double expected = 10000.0 / 14.0;
  double chi2 = 0.0;
  for (int k = 2; k <= 15; ++k) {
    const double diff = static_cast<double>(k_histogram[k]) - expected;
    chi2 += diff * diff / expected;
  }
  const double kCritical = 27.688;
  const double secs = timer.seconds();
  const bool pass = bad_k == 0 && bad_sides == 0 && chi2 < kCritical;
  report(4, pass,
         "tlm: K always in [2,15] (" + std::to_string(bad_k) + " out), sides exact (" +
             std::to_string(bad_sides) + " bad), chi2 " + fmt(chi2) + " < 27.688, " + fmt(secs) +
             "s");
}

// ---------------------------------------------------------------- criterion 5

void criterion_5() {
  std::vector<std::string> corpus;
  for (int s = 0; s < toyworld::kStates; ++s) {
    corpus.push_back(toyworld::line_text(s, false) + " " + toyworld::line_text(s, true));
    corpus.push_back(toyworld::line_text(s, false) + " " + toyworld::line_text(s, true));
  }
  const auto vocab = tokenizer::build_vocab(corpus, 200);
  std::vector<subtitles::ParallelDialog> pool;
  rng::Rng rng(606);
  for (int m = 0; m < 50; ++m) {
    subtitles::ParallelDialog pd;
    pd.imdb_id = "mv" + std::to_string(m);
    int state = static_cast<int>(rng.below(toyworld::kStates));
    for (int i = 0; i < 12; ++i) {
      pd.pairs.push_back({pd.imdb_id, i, toyworld::line_text(state, false),
                          toyworld::line_text(state, true)});
      state = (state + toyworld::kStateStep) % toyworld::kStates;
    }
    pool.push_back(std::move(pd));
  }
  instances::RsConfig cfg;
  cfg.positives_per_dialog = 2;
  const auto batch = instances::gen_rs(pool, vocab, cfg, 1234);

  std::size_t bad_hard = 0, bad_easy = 0, bad_true = 0;
  std::map<std::string, std::map<std::pair<int, int>, int>> easy_counts;
  for (const auto& inst : batch) {
    const auto& prov = inst.provenance;
    if (inst.rs_label) {
      if (prov.resp_imdb_id != prov.imdb_id || prov.resp_line != prov.line_end + 1) ++bad_true;
    } else if (prov.resp_imdb_id == prov.imdb_id) {
      if (prov.resp_line < prov.line_end + 2) ++bad_hard;
    } else {
      ++easy_counts[prov.imdb_id][{prov.line_begin, prov.line_end}];
    }
  }
  for (const auto& [movie, per_ctx] : easy_counts) {
    for (const auto& [ctx, m] : per_ctx) {
      if (m < 1 || m > 3 * cfg.positives_per_dialog) ++bad_easy;
    }
  }
  // Tighter per-positive bound with one positive per dialog.
  instances::RsConfig single;
  const auto batch1 = instances::gen_rs(pool, vocab, single, 4321);
  std::map<std::string, int> easy1;
  for (const auto& inst : batch1) {
    if (!inst.rs_label && inst.provenance.resp_imdb_id != inst.provenance.imdb_id) {
      ++easy1[inst.provenance.imdb_id];
    }
  }
  for (const auto& [movie, m] : easy1) {
    if (m < 1 || m > 3) ++bad_easy;
  }

  const auto counts = instances::count_rs(batch);
  const bool pass = bad_true == 0 && bad_hard == 0 && bad_easy == 0 && counts.positives == 100;
  report(5, pass,
         "rs contracts: " + std::to_string(counts.positives) + " positives, " +
             std::to_string(counts.hard_negatives) + " hard (same movie, offset >= 2), " +
             std::to_string(counts.easy_negatives) + " easy (other movie), m within {1..3}");
}

// ---------------------------------------------------------------- criterion 6

void criterion_6() {
  testutil::TempDir dir;
  toyworld::write_parallel_corpus(dir.file("os.tsv"), 60, 8, 42);
  const auto pairs = subtitles::load_parallel_pairs_file(dir.file("os.tsv"));
  std::vector<std::string> corpus;
  for (const auto& p : pairs) {
    corpus.push_back(p.src_text);
    corpus.push_back(p.tgt_text);
  }
  const auto vocab = tokenizer::build_vocab(corpus, 200);

  bool pass = true;
  std::string detail;

  // segment_dialogs: two runs, 1 vs 8 threads.
  const auto seg_a = subtitles::segment_dialogs(pairs, 2, 15, 7, nullptr, 1);
  const auto seg_b = subtitles::segment_dialogs(pairs, 2, 15, 7, nullptr, 8);
  {
    std::ostringstream a, b;
    for (const auto& d : seg_a) subtitles::write_parallel_pairs(a, d.pairs);
    for (const auto& d : seg_b) subtitles::write_parallel_pairs(b, d.pairs);
    if (a.str() != b.str()) {
      pass = false;
      detail += "segment ";
    }
  }

  // Instance generators, serialized bytes.
  auto bytes_of = [](const std::vector<instances::TrainingInstance>& batch) {
    std::ostringstream out;
    instances::write_instances(out, batch);
    return out.str();
  };
  const auto tlm1 = bytes_of(instances::gen_tlm_batch(seg_a, vocab, instances::TlmConfig{},
                                                      instances::MaskingConfig{}, 9, 1));
  const auto tlm8 = bytes_of(instances::gen_tlm_batch(seg_a, vocab, instances::TlmConfig{},
                                                      instances::MaskingConfig{}, 9, 8));
  if (tlm1 != tlm8) {
    pass = false;
    detail += "tlm ";
  }
  const auto rs1 = bytes_of(instances::gen_rs(seg_a, vocab, instances::RsConfig{}, 11, 1));
  const auto rs8 = bytes_of(instances::gen_rs(seg_a, vocab, instances::RsConfig{}, 11, 8));
  if (rs1 != rs8) {
    pass = false;
    detail += "rs ";
  }
  std::vector<tokenizer::TokenSequence> seqs;
  for (const auto& p : pairs) seqs.push_back(tokenizer::encode(p.src_text, vocab, 64));
  const auto mlm1 =
      bytes_of(instances::gen_mlm_batch(seqs, instances::MaskingConfig{}, vocab.size(), 13, 1));
  const auto mlm8 =
      bytes_of(instances::gen_mlm_batch(seqs, instances::MaskingConfig{}, vocab.size(), 13, 8));
  if (mlm1 != mlm8) {
    pass = false;
    detail += "mlm ";
  }

  // Samplers.
  std::vector<std::string> pool_texts;
  for (const auto& p : pairs) pool_texts.push_back(p.tgt_text + std::to_string(pool_texts.size()));
  std::vector<std::size_t> truths = {1, 5, 9, 33, 77};
  const auto cand1 = metrics::sample_rr_candidates(truths, pool_texts, 20, 3, 1);
  const auto cand8 = metrics::sample_rr_candidates(truths, pool_texts, 20, 3, 8);
  for (std::size_t i = 0; i < cand1.size(); ++i) {
    if (cand1[i].candidate_ids != cand8[i].candidate_ids ||
        cand1[i].true_position != cand8[i].true_position) {
      pass = false;
      detail += "rr-sampler ";
      break;
    }
  }
  std::map<std::string, std::vector<std::string>> splits;
  for (int i = 0; i < 500; ++i) splits["dev"].push_back("d" + std::to_string(i));
  if (metrics::qc_sample(splits, 0.1, 0, 5) != metrics::qc_sample(splits, 0.1, 0, 5)) {
    pass = false;
    detail += "qc-sampler ";
  }
  std::map<std::string, std::vector<std::string>> pools;
  for (int i = 0; i < 300; ++i) pools["en"].push_back("s" + std::to_string(i));
  const auto flat1 = subtitles::sample_flat_corpus(pools, subtitles::FlatCorpusKind::mono_cc,
                                                   100, 17, "en");
  const auto flat2 = subtitles::sample_flat_corpus(pools, subtitles::FlatCorpusKind::mono_cc,
                                                   100, 17, "en");
  if (flat1.sentences != flat2.sentences) {
    pass = false;
    detail += "flat-sampler ";
  }

  // Trainer: two runs, bit-identical checkpoints.
  {
    encoder::ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.d_model = 16;
    mc.d_ff = 32;
    mc.max_len = 64;
    auto rs_train = instances::gen_rs(seg_a, vocab, instances::RsConfig{}, 21);
    rs_train.resize(std::min<std::size_t>(rs_train.size(), 64));
    encoder::TrainStage stage;
    stage.name = "fit";
    stage.objective = encoder::Objective::rs;
    stage.lm_train = rs_train;
    stage.batch_size = 8;
    stage.patience = 2;
    stage.max_epochs = 3;
    stage.learning_rate = 1e-3;
    stage.dev_score = encoder::dev_loss_scorer(encoder::Objective::rs, rs_train);
    encoder::TrainConfig tc;
    tc.seed = 31;
    const auto params = encoder::ModelParams::init(mc, 8);
    const auto ck1 = encoder::train(params, {stage}, tc);
    const auto ck2 = encoder::train(params, {stage}, tc);
    if (encoder::checkpoint_bytes(ck1) != encoder::checkpoint_bytes(ck2)) {
      pass = false;
      detail += "trainer ";
    }
  }

  report(6, pass,
         pass ? "determinism: generators, samplers and trainer bit-identical across runs and "
                "1 vs 8 threads"
              : "determinism broken in: " + detail);
}

// ---------------------------------------------------------------- criterion 7

void criterion_7() {
  Timer timer;
  encoder::ModelConfig cfg;
  cfg.vocab_size = 512;
  cfg.d_model = 32;
  cfg.d_ff = 64;
  cfg.max_len = 64;
  dialog::Ontology ontology;
  ontology.values[{"food", "dish"}] = {"none", "dontcare", "rice", "noodle", "soup"};
  ontology.values[{"train", "day"}] = {"none", "dontcare", "monday", "tuesday"};
  auto params = encoder::ModelParams::init(cfg, 7, &ontology);
  rng::Rng noise(15);
  for (Eigen::Index i = 0; i < params.w_rs.rows(); ++i) params.w_rs(i, 0) = 0.05 * noise.normal();
  for (auto& [key, head] : params.dst_heads) {
    for (Eigen::Index i = 0; i < head.w.rows(); ++i) {
      for (Eigen::Index j = 0; j < head.w.cols(); ++j) head.w(i, j) = 0.05 * noise.normal();
    }
  }

  instances::TrainingInstance mlm;
  mlm.kind = instances::InstanceKind::mlm;
  mlm.tokens.ids = {tokenizer::kCls, 9, tokenizer::kMask, 17, 33, tokenizer::kMask,
                    41, 99, 204, tokenizer::kSep};
  mlm.tokens.type_ids.assign(mlm.tokens.ids.size(), 0);
  mlm.mlm_labels = {{2, 12}, {5, 301}};
  const double err_mlm = encoder::grad_check(params, mlm, encoder::Objective::mlm, 1e-5, 120, 3);

  instances::TrainingInstance rs;
  rs.kind = instances::InstanceKind::rs;
  rs.tokens.ids = {tokenizer::kCls, 9, 17, tokenizer::kSep, 33, 41, tokenizer::kSep};
  rs.tokens.type_ids = {0, 0, 0, 0, 1, 1, 1};
  rs.rs_label = true;
  const double err_rs = encoder::grad_check(params, rs, encoder::Objective::rs, 1e-5, 120, 4);

  encoder::DstExample ex;
  ex.tokens.ids = {tokenizer::kCls, 9, 17, 33, tokenizer::kSep};
  ex.tokens.type_ids.assign(5, 0);
  ex.gold.values[{"food", "dish"}] = "rice";
  ex.gold.values[{"train", "day"}] = "monday";
  const double err_dst = encoder::grad_check_dst(params, ex, ontology, 1e-5, 120, 5);

  const double secs = timer.seconds();
  const bool pass = err_mlm <= 1e-4 && err_rs <= 1e-4 && err_dst <= 1e-4 && secs < 60.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "grad check (d=32, 120 coords each): mlm %.2e, rs %.2e, dst %.2e (<= 1e-4), %.1fs",
                err_mlm, err_rs, err_dst, secs);
  report(7, pass, buf);
}

// ---------------------------------------------------------------- criterion 8

experiment::ExperimentManifest toy_manifest(const testutil::TempDir& dir,
                                            const std::string& name,
                                            bool specialized, experiment::Task task,
                                            experiment::Mode mode) {
  experiment::ExperimentManifest m;
  m.name = name;
  m.mode = mode;
  m.task = task;
  m.target_lang = "xx";
  if (specialized) {
    m.specialization.push_back({"tlm", "parallel"});
    m.specialization.push_back({"rs_mono", "parallel"});
  }
  if (mode == experiment::Mode::few_shot) {
    experiment::SplitSpec split;
    split.fraction = 0.01;
    split.seed = 1;
    m.split = split;
  }
  m.model.d_model = 32;
  m.model.d_ff = 64;
  m.model.max_len = 64;
  m.history_window = 3;
  m.rr_candidates = 100;
  m.rr_max_contexts = 100;
  m.rs_positives_per_dialog = 1;
  m.seed = 17;
  // Desk-scale optimization: the paper-default learning-rate grid spans
  // 1e-4..1e-6 for full-size encoders; this 2-layer-free toy model needs a
  // larger step to converge inside the runtime budget.
  m.train.lr_grid = {3e-3};
  m.train.downstream_lr = 3e-3;
  m.train.batch_mlm = 16;
  m.train.batch_rs = 32;
  m.train.batch_dst = 6;
  m.train.batch_rr = 24;
  m.train.patience_mlm = 3;
  m.train.patience_rs = 6;
  m.train.patience_downstream = 10;
  m.train.max_epochs_specialization = 30;
  m.train.max_epochs_zero_shot = 60;
  m.train.max_epochs_few_shot = 15;
  m.data["vocab"] = {dir.file("vocab.txt"), ""};
  m.data["parallel"] = {dir.file("os.tsv"), ""};
  m.data["task_train"] = {dir.file("task_train.json"), ""};
  m.data["task_dev"] = {dir.file("task_dev.json"), ""};
  m.data["target_dev"] = {dir.file("target_dev.json"), ""};
  m.data["target_test"] = {dir.file("target_test.json"), ""};
  m.data["ontology"] = {dir.file("ontology.json"), ""};
  m.data["target_ontology"] = {dir.file("target_ontology.json"), ""};
  return m;
}

void criterion_8() {
  Timer timer;
  testutil::TempDir dir;
  // Synthetic two-language world: 2,000 parallel dialogs, ~200-piece vocab.
  toyworld::write_parallel_corpus(dir.file("os.tsv"), 2000, 4, 11);
  toyworld::write_vocab(dir.file("vocab.txt"), 200);
  toyworld::write_task_corpus(dir.file("task_train.json"), false, 200, 21, "tr");
  toyworld::write_task_corpus(dir.file("task_dev.json"), false, 40, 22, "dv");
  toyworld::write_task_corpus(dir.file("target_dev.json"), true, 300, 23, "xd");
  toyworld::write_task_corpus(dir.file("target_test.json"), true, 60, 24, "xt");
  toyworld::write_ontology(dir.file("ontology.json"), false);
  toyworld::write_ontology(dir.file("target_ontology.json"), true);

  auto run = [&](const std::string& name, bool specialized, experiment::Task task,
                 experiment::Mode mode) {
    const auto manifest = toy_manifest(dir, name, specialized, task, mode);
    return experiment::run_experiment(manifest).value;
  };

  const double rr_spec_zero =
      run("spec_rr_zero", true, experiment::Task::rr, experiment::Mode::zero_shot);
  const double rr_spec_few =
      run("spec_rr_few", true, experiment::Task::rr, experiment::Mode::few_shot);
  const double rr_base_few =
      run("base_rr_few", false, experiment::Task::rr, experiment::Mode::few_shot);
  const double dst_spec_few =
      run("spec_dst_few", true, experiment::Task::dst, experiment::Mode::few_shot);
  const double dst_base_few =
      run("base_dst_few", false, experiment::Task::dst, experiment::Mode::few_shot);

  const double secs = timer.seconds();
  const bool pass = rr_spec_zero >= 0.30 && rr_spec_few > rr_base_few &&
                    dst_spec_few > dst_base_few && secs < 600.0;
  report(8, pass,
         "toy transfer: zero-shot R@1 spec " + fmt(rr_spec_zero) + " (>= 0.30); 1%-shot R@1 " +
             fmt(rr_spec_few) + " > " + fmt(rr_base_few) + "; 1%-shot JGA " + fmt(dst_spec_few) +
             " > " + fmt(dst_base_few) + "; " + fmt(secs) + "s (limit 600s)");
}

// ---------------------------------------------------------------- criterion 9

void criterion_9() {
  std::vector<std::string> ids;
  for (int i = 0; i < 1000; ++i) ids.push_back("dlg" + std::to_string(i));
  const std::vector<std::pair<double, std::size_t>> ladder = {
      {0.01, 10}, {0.05, 50}, {0.10, 100}, {0.50, 500}, {1.00, 1000}};
  bool pass = true;
  std::string sizes;
  for (const auto& [fraction, want] : ladder) {
    experiment::SplitSpec spec;
    spec.fraction = fraction;
    spec.seed = 5;
    const auto split = experiment::make_fewshot_split(ids, spec);
    if (split.size() != want) pass = false;
    if (!sizes.empty()) sizes += ",";
    sizes += std::to_string(split.size());
  }
  report(9, pass, "few-shot split sizes over 1000 dev dialogs: {" + sizes + "}");
}

// --------------------------------------------------------------- criterion 10

void criterion_10() {
  encoder::ModelConfig mc;
  mc.vocab_size = 32;
  mc.d_model = 8;
  mc.d_ff = 16;
  mc.max_len = 16;
  const auto params = encoder::ModelParams::init(mc, 3);
  std::vector<instances::TrainingInstance> train;
  for (int i = 0; i < 6; ++i) {
    instances::TrainingInstance inst;
    inst.kind = instances::InstanceKind::rs;
    inst.tokens.ids = {tokenizer::kCls, 6 + i % 3, tokenizer::kSep, 9, tokenizer::kSep};
    inst.tokens.type_ids = {0, 0, 0, 1, 1};
    inst.rs_label = i % 2 == 0;
    train.push_back(std::move(inst));
  }

  bool pass = true;
  std::string detail;
  for (int patience : {3, 10}) {
    auto calls = std::make_shared<int>(0);
    auto first_snapshot = std::make_shared<std::string>();
    encoder::TrainStage stage;
    stage.name = "worsening";
    stage.objective = encoder::Objective::rs;
    stage.lm_train = train;
    stage.batch_size = 2;
    stage.patience = patience;
    stage.max_epochs = 50;
    stage.learning_rate = 1e-3;
    stage.dev_score = [calls, first_snapshot](const encoder::ModelParams& p) {
      ++*calls;
      if (*calls == 1) {
        encoder::Checkpoint snap;
        snap.params = p;
        *first_snapshot = encoder::checkpoint_bytes(snap);
      }
      return -static_cast<double>(*calls);
    };
    encoder::TrainConfig tc;
    tc.seed = 1;
    const auto ckpt = encoder::train(params, {stage}, tc);
    encoder::Checkpoint best;
    best.params = ckpt.params;
    const bool epochs_ok = ckpt.history[0].epochs_run == patience + 1;
    const bool params_ok = encoder::checkpoint_bytes(best) == *first_snapshot;
    if (!epochs_ok || !params_ok) pass = false;
    detail += "patience " + std::to_string(patience) + " -> " +
              std::to_string(ckpt.history[0].epochs_run) + " epochs; ";
  }
  report(10, pass, "early stopping: " + detail + "best checkpoint returned");
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_9();
  criterion_10();
  criterion_8();  // the slow end-to-end run goes last
  if (g_failures == 0) {
    std::printf("acceptance: all criteria passed\n");
  } else {
    std::printf("acceptance: %d criteria FAILED\n", g_failures);
  }
  return g_failures;
}
