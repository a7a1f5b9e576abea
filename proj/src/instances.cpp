#include "xtod/instances.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include "json.hpp"
#include "xtod/rng.hpp"

namespace xtod::instances {

using tokenizer::kNumSpecials;
using ordered_json = nlohmann::ordered_json;

void MaskingConfig::validate() const {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
    throw ValidationError("mask_rate must lie in (0, 1)");
  }
  const double sum = replace_mask_p + replace_random_p + keep_p;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("replacement probabilities must sum to 1");
  }
  if (min_masked < 1) throw ValidationError("min_masked must be at least 1");
}

void TlmConfig::validate() const {
  if (k_min < 2 || k_min > k_max) throw ValidationError("TLM requires 2 <= k_min <= k_max");
  if (per_side_max < 2) throw ValidationError("per_side_max must be at least 2");
}

void RsConfig::validate() const {
  if (m_min < 1 || m_min > m_max) throw ValidationError("RS requires 1 <= m_min <= m_max");
  if (min_hard_offset < 2) {
    throw ValidationError("min_hard_offset must be >= 2 (offset 1 is the true response)");
  }
  if (context_min < 1 || context_min > context_max) {
    throw ValidationError("RS requires 1 <= context_min <= context_max");
  }
  if (hard_negatives_per_positive < 0) throw ValidationError("negative counts must be >= 0");
  if (positives_per_dialog < 1) throw ValidationError("positives_per_dialog must be >= 1");
}

namespace {

// In-place 80/10/10 masking; fills labels with position -> original id.
void apply_masking(tokenizer::TokenSequence& seq, std::map<int, int>& labels,
                   const MaskingConfig& cfg, int vocab_size, rng::Rng& rng) {
  std::vector<int> maskable;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (seq.ids[i] >= kNumSpecials) maskable.push_back(static_cast<int>(i));
  }
  if (maskable.empty()) {
    throw ValidationError("masking requires at least one non-special token");
  }
  const auto n = static_cast<double>(maskable.size());
  auto count = static_cast<std::size_t>(std::floor(cfg.mask_rate * n + 0.5));  // round half up
  count = std::clamp<std::size_t>(count, static_cast<std::size_t>(cfg.min_masked),
                                  maskable.size());

  std::vector<int> chosen;
  for (std::size_t k : rng.sample_indices(maskable.size(), count)) chosen.push_back(maskable[k]);
  std::sort(chosen.begin(), chosen.end());

  const int n_regular = vocab_size - kNumSpecials;
  for (int pos : chosen) {
    labels[pos] = seq.ids[pos];
    const double r = rng.real01();
    if (r < cfg.replace_mask_p) {
      seq.ids[pos] = tokenizer::kMask;
    } else if (r < cfg.replace_mask_p + cfg.replace_random_p && n_regular > 0) {
      seq.ids[pos] = kNumSpecials + static_cast<int>(rng.below(n_regular));
    }
    // else: keep the original id (still labeled)
  }
}

std::string join_texts(const std::vector<subtitles::ParallelUtterancePair>& pairs,
                       std::size_t begin, std::size_t end, bool target_side) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (!out.empty()) out += ' ';
    out += target_side ? pairs[i].tgt_text : pairs[i].src_text;
  }
  return out;
}

}  // namespace

TrainingInstance gen_mlm(const tokenizer::TokenSequence& seq, const MaskingConfig& cfg,
                         int vocab_size, std::uint64_t seed) {
  cfg.validate();
  TrainingInstance inst;
  inst.kind = InstanceKind::mlm;
  inst.tokens = seq;
  inst.provenance.seed = seed;
  rng::Rng rng(rng::derive(seed, "mlm"));
  apply_masking(inst.tokens, inst.mlm_labels, cfg, vocab_size, rng);
  return inst;
}

std::optional<TrainingInstance> gen_tlm(const subtitles::ParallelDialog& pd,
                                        const tokenizer::Vocab& vocab, const TlmConfig& cfg,
                                        const MaskingConfig& mask, std::uint64_t seed) {
  cfg.validate();
  mask.validate();
  const auto len = static_cast<int>(pd.size());
  if (len < cfg.k_min) return std::nullopt;

  rng::Rng rng(rng::derive(seed, "tlm", pd.imdb_id, 0));
  const int k = static_cast<int>(rng.uniform_int(cfg.k_min, std::min(cfg.k_max, len)));
  const int start = static_cast<int>(rng.uniform_int(0, len - k));

  TrainingInstance inst;
  inst.kind = InstanceKind::tlm;
  inst.provenance.imdb_id = pd.imdb_id;
  inst.provenance.line_begin = pd.pairs[start].line_index;
  inst.provenance.line_end = pd.pairs[start + k - 1].line_index;
  inst.provenance.seed = seed;

  if (cfg.layout == TlmLayout::block) {
    const std::string src = join_texts(pd.pairs, start, start + k, /*target_side=*/false);
    const std::string tgt = join_texts(pd.pairs, start, start + k, /*target_side=*/true);
    inst.tokens = tokenizer::encode_pair(src, tgt, vocab, cfg.per_side_max);
  } else {
    // Alternating layout: src_i and tgt_i interleaved per utterance,
    // type_ids marking the language side.
    inst.tokens.ids.push_back(tokenizer::kCls);
    inst.tokens.type_ids.push_back(0);
    const std::size_t cap = 2 * cfg.per_side_max;
    for (int i = start; i < start + k; ++i) {
      for (int side = 0; side < 2; ++side) {
        const std::string& text = side == 0 ? pd.pairs[i].src_text : pd.pairs[i].tgt_text;
        for (int id : tokenizer::tokenize(text, vocab)) {
          if (inst.tokens.size() + 1 >= cap) break;
          inst.tokens.ids.push_back(id);
          inst.tokens.type_ids.push_back(side);
        }
      }
    }
    inst.tokens.ids.push_back(tokenizer::kSep);
    inst.tokens.type_ids.push_back(1);
  }

  apply_masking(inst.tokens, inst.mlm_labels, mask, vocab.size(), rng);
  return inst;
}

namespace {

struct MoviePool {
  std::vector<std::string> ids;  // distinct imdb ids, sorted
  // imdb -> utterances from all windows of that movie, sorted by line_index
  std::map<std::string, std::vector<const subtitles::ParallelUtterancePair*>> utterances;
};

MoviePool index_movies(const std::vector<subtitles::ParallelDialog>& pool) {
  MoviePool mp;
  for (const auto& d : pool) {
    auto& list = mp.utterances[d.imdb_id];
    for (const auto& p : d.pairs) list.push_back(&p);
  }
  for (auto& [id, list] : mp.utterances) {
    std::sort(list.begin(), list.end(),
              [](const auto* a, const auto* b) { return a->line_index < b->line_index; });
    mp.ids.push_back(id);
  }
  return mp;
}

}  // namespace

std::vector<TrainingInstance> gen_rs(const std::vector<subtitles::ParallelDialog>& pool,
                                     const tokenizer::Vocab& vocab, const RsConfig& cfg,
                                     std::uint64_t seed, unsigned threads) {
  cfg.validate();
  const MoviePool movies = index_movies(pool);
  if (movies.ids.size() < 2) {
    throw ValidationError("RS generation needs at least 2 distinct imdb_ids for easy negatives");
  }

  // Language sides: mono keeps everything in the target language; cross puts
  // the response in the source language (or the reverse under the flag).
  const bool ctx_target = cfg.mode == RsMode::mono || !cfg.reverse_direction;
  const bool resp_target = cfg.mode == RsMode::mono || cfg.reverse_direction;

  std::vector<std::vector<TrainingInstance>> per_dialog(pool.size());
  rng::parallel_for(pool.size(), threads, [&](std::size_t di) {
    const subtitles::ParallelDialog& d = pool[di];
    const auto len = static_cast<int>(d.size());
    if (len < cfg.context_min + 1) return;
    rng::Rng rng(rng::derive(seed, "rs", d.imdb_id, di));

    for (int p = 0; p < cfg.positives_per_dialog; ++p) {
      const int c = static_cast<int>(rng.uniform_int(cfg.context_min,
                                                     std::min(cfg.context_max, len - 1)));
      const int start = static_cast<int>(rng.uniform_int(0, len - c - 1));
      const int ctx_end_line = d.pairs[start + c - 1].line_index;
      const std::string ctx = join_texts(d.pairs, start, start + c, ctx_target);

      auto emit = [&](const subtitles::ParallelUtterancePair& resp_pair,
                      const std::string& resp_imdb, bool label) {
        TrainingInstance inst;
        inst.kind = InstanceKind::rs;
        inst.rs_label = label;
        inst.provenance.imdb_id = d.imdb_id;
        inst.provenance.line_begin = d.pairs[start].line_index;
        inst.provenance.line_end = ctx_end_line;
        inst.provenance.resp_imdb_id = resp_imdb;
        inst.provenance.resp_line = resp_pair.line_index;
        inst.provenance.seed = seed;
        const std::string& resp = resp_target ? resp_pair.tgt_text : resp_pair.src_text;
        inst.tokens = tokenizer::encode_pair(ctx, resp, vocab, cfg.per_side_max);
        per_dialog[di].push_back(std::move(inst));
      };

      // True response: the immediately following utterance.
      emit(d.pairs[start + c], d.imdb_id, true);

      // Hard negatives: same movie, non-immediate (offset >= min_hard_offset).
      const auto& same_movie = movies.utterances.at(d.imdb_id);
      std::vector<const subtitles::ParallelUtterancePair*> hard_candidates;
      for (const auto* u : same_movie) {
        if (u->line_index >= ctx_end_line + cfg.min_hard_offset) hard_candidates.push_back(u);
      }
      const auto hard_n = std::min<std::size_t>(cfg.hard_negatives_per_positive,
                                                hard_candidates.size());
      if (hard_n > 0) {
        for (std::size_t k : rng.sample_indices(hard_candidates.size(), hard_n)) {
          emit(*hard_candidates[k], d.imdb_id, false);
        }
      }

      // Easy negatives: m responses from different movies.
      const int m = static_cast<int>(rng.uniform_int(cfg.m_min, cfg.m_max));
      for (int e = 0; e < m; ++e) {
        std::size_t other = rng.below(movies.ids.size() - 1);
        const auto self = static_cast<std::size_t>(
            std::lower_bound(movies.ids.begin(), movies.ids.end(), d.imdb_id) -
            movies.ids.begin());
        if (other >= self) ++other;
        const auto& others = movies.utterances.at(movies.ids[other]);
        emit(*others[rng.below(others.size())], movies.ids[other], false);
      }
    }
  });

  std::vector<TrainingInstance> out;
  for (auto& batch : per_dialog) {
    for (auto& inst : batch) out.push_back(std::move(inst));
  }
  return out;
}

RsCounts count_rs(const std::vector<TrainingInstance>& batch) {
  RsCounts c;
  for (const auto& inst : batch) {
    if (inst.kind != InstanceKind::rs) continue;
    if (inst.rs_label) {
      ++c.positives;
    } else if (inst.provenance.resp_imdb_id == inst.provenance.imdb_id) {
      ++c.hard_negatives;
    } else {
      ++c.easy_negatives;
    }
  }
  return c;
}

std::vector<TrainingInstance> gen_mlm_batch(const std::vector<tokenizer::TokenSequence>& seqs,
                                            const MaskingConfig& cfg, int vocab_size,
                                            std::uint64_t seed, unsigned threads) {
  std::vector<TrainingInstance> out(seqs.size());
  rng::parallel_for(seqs.size(), threads, [&](std::size_t i) {
    out[i] = gen_mlm(seqs[i], cfg, vocab_size, rng::derive(seed, "mlm_batch", i));
  });
  return out;
}

std::vector<TrainingInstance> gen_tlm_batch(const std::vector<subtitles::ParallelDialog>& pool,
                                            const tokenizer::Vocab& vocab, const TlmConfig& cfg,
                                            const MaskingConfig& mask, std::uint64_t seed,
                                            unsigned threads) {
  std::vector<std::optional<TrainingInstance>> slots(pool.size());
  rng::parallel_for(pool.size(), threads, [&](std::size_t i) {
    slots[i] = gen_tlm(pool[i], vocab, cfg, mask, rng::derive(seed, "tlm_batch", i));
  });
  std::vector<TrainingInstance> out;
  out.reserve(pool.size());
  for (auto& s : slots) {
    if (s.has_value()) out.push_back(std::move(*s));
  }
  return out;
}

std::vector<int> restore_original_ids(const TrainingInstance& inst) {
  std::vector<int> ids = inst.tokens.ids;
  for (const auto& [pos, orig] : inst.mlm_labels) ids[pos] = orig;
  return ids;
}

namespace {

const char* kind_name(InstanceKind k) {
  switch (k) {
    case InstanceKind::mlm: return "mlm";
    case InstanceKind::tlm: return "tlm";
    default: return "rs";
  }
}

InstanceKind kind_from(const std::string& s) {
  if (s == "mlm") return InstanceKind::mlm;
  if (s == "tlm") return InstanceKind::tlm;
  if (s == "rs") return InstanceKind::rs;
  throw ParseError("unknown instance kind '" + s + "'");
}

}  // namespace

void write_instances(std::ostream& out, const std::vector<TrainingInstance>& batch) {
  for (const auto& inst : batch) {
    ordered_json rec;
    rec["v"] = 1;
    rec["kind"] = kind_name(inst.kind);
    rec["ids"] = inst.tokens.ids;
    rec["type_ids"] = inst.tokens.type_ids;
    if (inst.kind != InstanceKind::rs) {
      ordered_json labels = ordered_json::array();
      for (const auto& [pos, id] : inst.mlm_labels) labels.push_back({pos, id});
      rec["mlm_labels"] = std::move(labels);
    } else {
      rec["rs_label"] = inst.rs_label;
    }
    ordered_json prov;
    prov["imdb_id"] = inst.provenance.imdb_id;
    prov["dialog_id"] = inst.provenance.dialog_id;
    prov["line_begin"] = inst.provenance.line_begin;
    prov["line_end"] = inst.provenance.line_end;
    prov["resp_imdb_id"] = inst.provenance.resp_imdb_id;
    prov["resp_line"] = inst.provenance.resp_line;
    prov["seed"] = inst.provenance.seed;
    rec["provenance"] = std::move(prov);
    out << rec.dump() << '\n';
  }
}

std::vector<TrainingInstance> read_instances(std::istream& input) {
  std::vector<TrainingInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(input, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("instance file line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    if (rec.value("v", 0) != 1) {
      throw ParseError("instance file line " + std::to_string(line_no) +
                           ": unsupported schema version",
                       line_no);
    }
    TrainingInstance inst;
    inst.kind = kind_from(rec.at("kind").get<std::string>());
    inst.tokens.ids = rec.at("ids").get<std::vector<int>>();
    inst.tokens.type_ids = rec.at("type_ids").get<std::vector<int>>();
    if (rec.contains("mlm_labels")) {
      for (const auto& pair : rec["mlm_labels"]) {
        inst.mlm_labels[pair.at(0).get<int>()] = pair.at(1).get<int>();
      }
    }
    inst.rs_label = rec.value("rs_label", false);
    if (rec.contains("provenance")) {
      const auto& prov = rec["provenance"];
      inst.provenance.imdb_id = prov.value("imdb_id", "");
      inst.provenance.dialog_id = prov.value("dialog_id", "");
      inst.provenance.line_begin = prov.value("line_begin", -1);
      inst.provenance.line_end = prov.value("line_end", -1);
      inst.provenance.resp_imdb_id = prov.value("resp_imdb_id", "");
      inst.provenance.resp_line = prov.value("resp_line", -1);
      inst.provenance.seed = prov.value("seed", std::uint64_t{0});
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace xtod::instances
