#include "xtod/experiment.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xtod/digest.hpp"
#include "xtod/rng.hpp"
#include "xtod/subtitles.hpp"

namespace xtod::experiment {

using ordered_json = nlohmann::ordered_json;

void SplitSpec::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("split fraction must lie in (0, 1]");
  }
}

std::vector<std::string> make_fewshot_split(const std::vector<std::string>& dev_dialog_ids,
                                            const SplitSpec& spec) {
  spec.validate();
  if (dev_dialog_ids.empty()) throw ValidationError("dev set is empty");
  const auto n = dev_dialog_ids.size();
  const auto size = static_cast<std::size_t>(
      std::floor(spec.fraction * static_cast<double>(n) + 0.5));
  if (size == 0) {
    throw ValidationError("split fraction " + std::to_string(spec.fraction) +
                          " yields zero dialogs");
  }
  std::vector<std::string> ids = dev_dialog_ids;
  if (spec.nested) {
    // One permutation per seed; every fraction is a prefix of it.
    rng::Rng rng(rng::derive(spec.seed, "fewshot_split"));
    rng.shuffle(ids);
    ids.resize(size);
    return ids;
  }
  rng::Rng rng(rng::derive(spec.seed, "fewshot_split_independent",
                           static_cast<std::uint64_t>(std::llround(spec.fraction * 1e9))));
  std::vector<std::string> out;
  out.reserve(size);
  for (std::size_t idx : rng.sample_indices(n, size)) out.push_back(ids[idx]);
  return out;
}

void ExperimentManifest::validate() const {
  if (target_lang.empty()) throw ValidationError("manifest: target_lang is required");
  if (mode == Mode::few_shot && !split.has_value()) {
    throw ValidationError("manifest: few_shot mode requires a split spec");
  }
  if (split.has_value()) split->validate();
  for (const auto& stage : specialization) {
    if (stage.objective != "mlm" && stage.objective != "tlm" && stage.objective != "rs_mono" &&
        stage.objective != "rs_x") {
      throw ValidationError("manifest: unknown specialization objective '" + stage.objective +
                            "'");
    }
    if (data.find(stage.data) == data.end()) {
      throw ValidationError("manifest: stage data key '" + stage.data + "' not in data map");
    }
  }
  if (data.find("vocab") == data.end()) throw ValidationError("manifest: data.vocab is required");
  if (rr_candidates < 2) throw ValidationError("manifest: rr_candidates must be >= 2");
  train.validate();
}

namespace {

ordered_json train_to_json(const encoder::TrainConfig& t) {
  ordered_json j;
  j["lr_grid"] = t.lr_grid;
  j["downstream_lr"] = t.downstream_lr;
  j["batch_mlm"] = t.batch_mlm;
  j["batch_rs"] = t.batch_rs;
  j["batch_dst"] = t.batch_dst;
  j["batch_rr"] = t.batch_rr;
  j["patience_mlm"] = t.patience_mlm;
  j["patience_rs"] = t.patience_rs;
  j["patience_downstream"] = t.patience_downstream;
  j["max_epochs_specialization"] = t.max_epochs_specialization;
  j["max_epochs_zero_shot"] = t.max_epochs_zero_shot;
  j["max_epochs_few_shot"] = t.max_epochs_few_shot;
  return j;
}

encoder::TrainConfig train_from_json(const ordered_json& j) {
  encoder::TrainConfig t;
  if (j.contains("lr_grid")) t.lr_grid = j["lr_grid"].get<std::vector<double>>();
  t.downstream_lr = j.value("downstream_lr", t.downstream_lr);
  t.batch_mlm = j.value("batch_mlm", t.batch_mlm);
  t.batch_rs = j.value("batch_rs", t.batch_rs);
  t.batch_dst = j.value("batch_dst", t.batch_dst);
  t.batch_rr = j.value("batch_rr", t.batch_rr);
  t.patience_mlm = j.value("patience_mlm", t.patience_mlm);
  t.patience_rs = j.value("patience_rs", t.patience_rs);
  t.patience_downstream = j.value("patience_downstream", t.patience_downstream);
  t.max_epochs_specialization = j.value("max_epochs_specialization", t.max_epochs_specialization);
  t.max_epochs_zero_shot = j.value("max_epochs_zero_shot", t.max_epochs_zero_shot);
  t.max_epochs_few_shot = j.value("max_epochs_few_shot", t.max_epochs_few_shot);
  return t;
}

}  // namespace

std::string manifest_to_json(const ExperimentManifest& m) {
  ordered_json j;
  j["v"] = 1;
  j["name"] = m.name;
  j["mode"] = m.mode == Mode::zero_shot ? "zero_shot" : "few_shot";
  j["task"] = m.task == Task::dst ? "dst" : "rr";
  j["source_lang"] = m.source_lang;
  j["target_lang"] = m.target_lang;
  ordered_json stages = ordered_json::array();
  for (const auto& s : m.specialization) {
    stages.push_back({{"objective", s.objective}, {"data", s.data}});
  }
  j["specialization"] = std::move(stages);
  if (m.split.has_value()) {
    j["split"] = {{"fraction", m.split->fraction},
                  {"seed", m.split->seed},
                  {"nested", m.split->nested}};
  }
  j["train"] = train_to_json(m.train);
  j["model"] = {{"d_model", m.model.d_model},
                {"d_ff", m.model.d_ff},
                {"max_len", m.model.max_len}};
  j["history_window"] = m.history_window;
  j["rr_candidates"] = m.rr_candidates;
  j["rr_max_contexts"] = m.rr_max_contexts;
  j["rs_positives_per_dialog"] = m.rs_positives_per_dialog;
  j["seed"] = m.seed;
  ordered_json data = ordered_json::object();
  for (const auto& [key, ref] : m.data) {
    data[key] = {{"path", ref.path}, {"sha256", ref.sha256}};
  }
  j["data"] = std::move(data);
  return j.dump(2) + "\n";
}

ExperimentManifest load_manifest(const std::string& path, bool verify_digests) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open manifest " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest: " + std::string(e.what()), e.byte);
  }
  if (j.value("v", 0) != 1) throw ParseError("manifest: unsupported schema version");

  ExperimentManifest m;
  m.name = j.value("name", "");
  const std::string mode = j.value("mode", "zero_shot");
  if (mode == "zero_shot") m.mode = Mode::zero_shot;
  else if (mode == "few_shot") m.mode = Mode::few_shot;
  else throw ParseError("manifest: unknown mode '" + mode + "'");
  const std::string task = j.value("task", "dst");
  if (task == "dst") m.task = Task::dst;
  else if (task == "rr") m.task = Task::rr;
  else throw ParseError("manifest: unknown task '" + task + "'");
  m.source_lang = j.value("source_lang", "en");
  m.target_lang = j.value("target_lang", "");
  for (const auto& s : j.value("specialization", ordered_json::array())) {
    m.specialization.push_back({s.at("objective").get<std::string>(),
                                s.at("data").get<std::string>()});
  }
  if (j.contains("split")) {
    SplitSpec spec;
    spec.fraction = j["split"].value("fraction", 0.01);
    spec.seed = j["split"].value("seed", std::uint64_t{0});
    spec.nested = j["split"].value("nested", true);
    m.split = spec;
  }
  if (j.contains("train")) m.train = train_from_json(j["train"]);
  if (j.contains("model")) {
    m.model.d_model = j["model"].value("d_model", m.model.d_model);
    m.model.d_ff = j["model"].value("d_ff", m.model.d_ff);
    m.model.max_len = j["model"].value("max_len", m.model.max_len);
  }
  m.history_window = j.value("history_window", m.history_window);
  m.rr_candidates = j.value("rr_candidates", m.rr_candidates);
  m.rr_max_contexts = j.value("rr_max_contexts", m.rr_max_contexts);
  m.rs_positives_per_dialog = j.value("rs_positives_per_dialog", m.rs_positives_per_dialog);
  m.seed = j.value("seed", std::uint64_t{0});
  const ordered_json data = j.value("data", ordered_json::object());
  for (const auto& [key, ref] : data.items()) {
    m.data[key] = {ref.at("path").get<std::string>(), ref.value("sha256", "")};
  }
  m.validate();
  m.digest = digest::sha256_hex(manifest_to_json(m));
  if (verify_digests) {
    for (const auto& [key, ref] : m.data) {
      const std::string actual = digest::sha256_file(ref.path);
      if (!ref.sha256.empty() && actual != ref.sha256) {
        throw ValidationError("manifest: digest mismatch for data '" + key + "' (" + ref.path +
                              ")");
      }
    }
  }
  return m;
}

void write_manifest(const std::string& path, ExperimentManifest manifest) {
  for (auto& [key, ref] : manifest.data) ref.sha256 = digest::sha256_file(ref.path);
  manifest.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write manifest " + path);
  out << manifest_to_json(manifest);
}

std::vector<encoder::DstExample> dst_examples_from_dialogs(
    const std::vector<dialog::Dialog>& dialogs, const tokenizer::Vocab& vocab,
    std::size_t max_len, int history_window) {
  std::vector<encoder::DstExample> out;
  for (const auto& d : dialogs) {
    const auto states = dialog::cumulative_states(d);
    std::size_t user_idx = 0;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (d.turns[t].speaker != dialog::Speaker::user) continue;
      const std::size_t begin =
          t + 1 > static_cast<std::size_t>(history_window) ? t + 1 - history_window : 0;
      std::string history;
      for (std::size_t i = begin; i <= t; ++i) {
        if (!history.empty()) history += ' ';
        history += d.turns[i].text;
      }
      encoder::DstExample ex;
      ex.tokens = tokenizer::encode(history, vocab, max_len);
      ex.gold = states[user_idx];
      out.push_back(std::move(ex));
      ++user_idx;
    }
  }
  return out;
}

namespace {

subtitles::ParallelDialog dialog_as_parallel(const dialog::Dialog& d) {
  subtitles::ParallelDialog pd;
  pd.imdb_id = d.dialog_id;
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    pd.pairs.push_back({d.dialog_id, static_cast<int>(t), d.turns[t].text, d.turns[t].text});
  }
  return pd;
}

}  // namespace

std::vector<instances::TrainingInstance> rs_instances_from_dialogs(
    const std::vector<dialog::Dialog>& dialogs, const tokenizer::Vocab& vocab,
    int positives_per_dialog, std::size_t per_side_max, std::uint64_t seed) {
  std::vector<subtitles::ParallelDialog> pool;
  pool.reserve(dialogs.size());
  for (const auto& d : dialogs) {
    if (d.turns.size() >= 2) pool.push_back(dialog_as_parallel(d));
  }
  instances::RsConfig cfg;
  cfg.mode = instances::RsMode::mono;
  cfg.positives_per_dialog = positives_per_dialog;
  cfg.per_side_max = per_side_max;
  return instances::gen_rs(pool, vocab, cfg, seed);
}

RrEvalSet rr_eval_from_dialogs(const std::vector<dialog::Dialog>& dialogs, int history_window) {
  RrEvalSet set;
  for (const auto& d : dialogs) {
    for (std::size_t t = 1; t < d.turns.size(); ++t) {
      const std::size_t begin =
          t > static_cast<std::size_t>(history_window) ? t - history_window : 0;
      std::string ctx;
      for (std::size_t i = begin; i < t; ++i) {
        if (!ctx.empty()) ctx += ' ';
        ctx += d.turns[i].text;
      }
      set.contexts.push_back(std::move(ctx));
      set.true_response_ids.push_back(set.pool.size());
      set.pool.push_back(d.turns[t].text);
    }
  }
  return set;
}

namespace {

const DataRef& data_ref(const ExperimentManifest& m, const std::string& key) {
  const auto it = m.data.find(key);
  if (it == m.data.end()) {
    throw ValidationError("manifest: missing data entry '" + key + "'");
  }
  return it->second;
}

std::vector<dialog::Dialog> load_corpus(const ExperimentManifest& m, const std::string& key) {
  return dialog::parse_dialog_corpus_file(data_ref(m, key).path,
                                          dialog::CorpusFormat::multi2woz);
}

// Deterministic 90/10 train/dev split of generated instances.
template <class T>
void split_train_dev(std::vector<T>& all, std::uint64_t seed, std::vector<T>& train,
                     std::vector<T>& dev) {
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  rng::Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n_dev = std::max<std::size_t>(1, all.size() / 10);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_dev) dev.push_back(std::move(all[order[i]]));
    else train.push_back(std::move(all[order[i]]));
  }
}

encoder::TrainStage make_lm_stage(const std::string& name, encoder::Objective objective,
                                  std::vector<instances::TrainingInstance> all, int batch_size,
                                  int patience, int max_epochs, std::uint64_t seed) {
  encoder::TrainStage stage;
  stage.name = name;
  stage.objective = objective;
  std::vector<instances::TrainingInstance> dev;
  split_train_dev(all, rng::derive(seed, "dev_split", name, 0), stage.lm_train, dev);
  stage.dev_score = encoder::dev_loss_scorer(objective, std::move(dev));
  stage.batch_size = batch_size;
  stage.patience = patience;
  stage.max_epochs = max_epochs;
  return stage;
}

std::vector<encoder::TrainStage> build_specialization_stages(const ExperimentManifest& m,
                                                             const tokenizer::Vocab& vocab) {
  std::vector<encoder::TrainStage> stages;
  const auto& tc = m.train;
  for (std::size_t si = 0; si < m.specialization.size(); ++si) {
    const auto& spec = m.specialization[si];
    const std::uint64_t stage_seed = rng::derive(m.seed, "spec_stage", si);
    if (spec.objective == "mlm") {
      std::ifstream in(data_ref(m, spec.data).path, std::ios::binary);
      if (!in) throw ParseError("cannot open flat corpus " + data_ref(m, spec.data).path);
      const subtitles::FlatCorpus flat = subtitles::read_flat_corpus(in);
      std::vector<tokenizer::TokenSequence> seqs;
      seqs.reserve(flat.sentences.size());
      const std::size_t max_len = std::min<std::size_t>(m.model.max_len, 128);
      for (const auto& [lang, text] : flat.sentences) {
        seqs.push_back(tokenizer::encode(text, vocab, max_len));
      }
      instances::MaskingConfig mask;
      auto insts = instances::gen_mlm_batch(seqs, mask, vocab.size(), stage_seed);
      stages.push_back(make_lm_stage("spec" + std::to_string(si) + ":mlm",
                                     encoder::Objective::mlm, std::move(insts), tc.batch_mlm,
                                     tc.patience_mlm, tc.max_epochs_specialization, stage_seed));
    } else {
      const auto pairs = subtitles::load_parallel_pairs_file(data_ref(m, spec.data).path);
      const auto windows = subtitles::segment_dialogs(pairs, 2, 15,
                                                      rng::derive(stage_seed, "segment"));
      if (spec.objective == "tlm") {
        instances::TlmConfig tlm;
        tlm.per_side_max = static_cast<std::size_t>(m.model.max_len) / 2;
        instances::MaskingConfig mask;
        auto insts = instances::gen_tlm_batch(windows, vocab, tlm, mask, stage_seed);
        stages.push_back(make_lm_stage("spec" + std::to_string(si) + ":tlm",
                                       encoder::Objective::mlm, std::move(insts), tc.batch_mlm,
                                       tc.patience_mlm, tc.max_epochs_specialization, stage_seed));
      } else {
        instances::RsConfig rs;
        rs.mode = spec.objective == "rs_mono" ? instances::RsMode::mono : instances::RsMode::cross;
        rs.positives_per_dialog = m.rs_positives_per_dialog;
        rs.per_side_max = static_cast<std::size_t>(m.model.max_len) / 2;
        auto insts = instances::gen_rs(windows, vocab, rs, stage_seed);
        stages.push_back(make_lm_stage("spec" + std::to_string(si) + ":" + spec.objective,
                                       encoder::Objective::rs, std::move(insts), tc.batch_rs,
                                       tc.patience_rs, tc.max_epochs_specialization, stage_seed));
      }
    }
  }
  return stages;
}

std::string model_label(const ExperimentManifest& m) {
  if (m.specialization.empty()) return "none";
  std::string label;
  for (const auto& s : m.specialization) {
    if (!label.empty()) label += '+';
    label += s.objective;
  }
  return label;
}

double evaluate_dst(const encoder::ModelParams& params, const tokenizer::Vocab& vocab,
                    const dialog::Ontology& ontology, const std::vector<dialog::Dialog>& test,
                    const ExperimentManifest& m) {
  std::vector<metrics::DialogPredictions> preds, gold;
  for (const auto& d : test) {
    metrics::DialogPredictions p, g;
    p.dialog_id = d.dialog_id;
    g.dialog_id = d.dialog_id;
    g.turns = dialog::cumulative_states(d);
    std::size_t user_idx = 0;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (d.turns[t].speaker != dialog::Speaker::user) continue;
      const std::size_t begin =
          t + 1 > static_cast<std::size_t>(m.history_window) ? t + 1 - m.history_window : 0;
      std::string history;
      for (std::size_t i = begin; i <= t; ++i) {
        if (!history.empty()) history += ' ';
        history += d.turns[i].text;
      }
      const auto tokens = tokenizer::encode(history, vocab, m.model.max_len);
      p.turns.push_back(encoder::predict_state(params, tokens, ontology));
      ++user_idx;
    }
    preds.push_back(std::move(p));
    gold.push_back(std::move(g));
  }
  return metrics::joint_goal_accuracy(preds, gold).accuracy;
}

double evaluate_rr(const encoder::ModelParams& params, const tokenizer::Vocab& vocab,
                   const std::vector<dialog::Dialog>& test, const ExperimentManifest& m) {
  RrEvalSet set = rr_eval_from_dialogs(test, m.history_window);
  std::vector<std::size_t> context_ids(set.contexts.size());
  std::iota(context_ids.begin(), context_ids.end(), 0);
  if (m.rr_max_contexts > 0 && context_ids.size() > m.rr_max_contexts) {
    rng::Rng rng(rng::derive(m.seed, "rr_eval_contexts"));
    std::vector<std::size_t> sampled;
    for (std::size_t idx : rng.sample_indices(context_ids.size(), m.rr_max_contexts)) {
      sampled.push_back(idx);
    }
    std::sort(sampled.begin(), sampled.end());
    context_ids = std::move(sampled);
  }
  std::vector<std::size_t> true_ids;
  true_ids.reserve(context_ids.size());
  for (std::size_t ci : context_ids) true_ids.push_back(set.true_response_ids[ci]);

  const auto candidate_sets = metrics::sample_rr_candidates(
      true_ids, set.pool, m.rr_candidates, rng::derive(m.seed, "rr_eval_sampling"));

  std::vector<metrics::Ranking> rankings;
  rankings.reserve(candidate_sets.size());
  const std::size_t per_side = static_cast<std::size_t>(m.model.max_len) / 2;
  for (std::size_t i = 0; i < candidate_sets.size(); ++i) {
    const auto& cs = candidate_sets[i];
    std::vector<std::string> texts;
    texts.reserve(cs.candidate_ids.size());
    for (std::size_t id : cs.candidate_ids) texts.push_back(set.pool[id]);
    const auto ranking =
        encoder::score_candidates(params, vocab, set.contexts[context_ids[i]], texts, per_side);
    rankings.push_back({ranking.order, cs.true_position});
  }
  return metrics::recall_at_k(rankings, 1).recall;
}

}  // namespace

RunRecord run_experiment(const ExperimentManifest& m, encoder::Checkpoint* out_checkpoint) {
  m.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const tokenizer::Vocab vocab = tokenizer::read_vocab_file(data_ref(m, "vocab").path);
  encoder::ModelConfig mc = m.model;
  mc.vocab_size = vocab.size();

  dialog::Ontology ontology;      // source language: training heads and gold lookup
  dialog::Ontology eval_ontology; // target language: index-aligned value lists
  if (m.task == Task::dst) {
    std::ifstream in(data_ref(m, "ontology").path, std::ios::binary);
    if (!in) throw ParseError("cannot open ontology " + data_ref(m, "ontology").path);
    ontology = dialog::parse_ontology(in);
    if (m.data.count("target_ontology") > 0) {
      std::ifstream tin(data_ref(m, "target_ontology").path, std::ios::binary);
      if (!tin) {
        throw ParseError("cannot open ontology " + data_ref(m, "target_ontology").path);
      }
      eval_ontology = dialog::parse_ontology(tin);
      for (const auto& [key, values] : ontology.values) {
        const auto it = eval_ontology.values.find(key);
        if (it == eval_ontology.values.end() || it->second.size() != values.size()) {
          throw ValidationError("target_ontology must mirror the ontology keys and value counts");
        }
      }
    } else {
      eval_ontology = ontology;
    }
  }

  encoder::TrainConfig tc = m.train;
  tc.seed = m.seed;

  encoder::Checkpoint ckpt;
  if (m.data.count("init_checkpoint") > 0) {
    // Warm start from a previously specialized encoder (the usual workflow:
    // specialize once per language, then fine-tune per task).
    encoder::Checkpoint loaded =
        encoder::load_checkpoint_file(data_ref(m, "init_checkpoint").path);
    if (!(loaded.params.config == mc)) {
      throw ValidationError("init_checkpoint model shape does not match the manifest");
    }
    ckpt.params = std::move(loaded.params);
    if (m.task == Task::dst && ckpt.params.dst_heads.empty()) {
      ckpt.params.add_dst_heads(ontology);
    }
  } else {
    ckpt.params = encoder::ModelParams::init(mc, rng::derive(m.seed, "model_init"),
                                             m.task == Task::dst ? &ontology : nullptr);
  }

  // Intermediate specialization, with the learning-rate grid applied to the
  // whole phase and the grid point with the best final dev score kept.
  auto spec_stages = build_specialization_stages(m, vocab);
  if (!spec_stages.empty()) {
    std::optional<encoder::Checkpoint> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (double lr : tc.lr_grid) {
      for (auto& stage : spec_stages) stage.learning_rate = lr;
      encoder::Checkpoint candidate = encoder::train(ckpt.params, spec_stages, tc);
      const double score = candidate.history.back().best_score;
      if (score > best_score) {
        best_score = score;
        best = std::move(candidate);
      }
    }
    ckpt.params = std::move(best->params);
    for (auto& rec : best->history) ckpt.history.push_back(std::move(rec));
  }

  // Source-language task fine-tuning.
  const auto task_train = load_corpus(m, "task_train");
  const auto task_dev = load_corpus(m, "task_dev");
  const std::size_t per_side = static_cast<std::size_t>(mc.max_len) / 2;

  encoder::TrainStage downstream;
  downstream.name = m.task == Task::dst ? "downstream:dst" : "downstream:rr";
  downstream.learning_rate = tc.downstream_lr;
  downstream.patience = tc.patience_downstream;
  downstream.max_epochs = tc.max_epochs_zero_shot;
  if (m.task == Task::dst) {
    downstream.objective = encoder::Objective::dst;
    downstream.ontology = &ontology;
    downstream.batch_size = tc.batch_dst;
    downstream.dst_train =
        dst_examples_from_dialogs(task_train, vocab, mc.max_len, m.history_window);
    downstream.dev_score = encoder::dev_dst_scorer(
        dst_examples_from_dialogs(task_dev, vocab, mc.max_len, m.history_window), ontology);
  } else {
    downstream.objective = encoder::Objective::rs;
    downstream.batch_size = tc.batch_rr;
    downstream.lm_train = rs_instances_from_dialogs(task_train, vocab, m.rs_positives_per_dialog,
                                                    per_side, rng::derive(m.seed, "task_rs"));
    downstream.dev_score = encoder::dev_loss_scorer(
        encoder::Objective::rs,
        rs_instances_from_dialogs(task_dev, vocab, m.rs_positives_per_dialog, per_side,
                                  rng::derive(m.seed, "task_rs_dev")));
  }
  {
    encoder::Checkpoint stage_ckpt = encoder::train(ckpt.params, {downstream}, tc);
    ckpt.params = std::move(stage_ckpt.params);
    for (auto& rec : stage_ckpt.history) ckpt.history.push_back(std::move(rec));
  }

  // Few-shot target-language fine-tuning on a dialog split of the dev set.
  if (m.mode == Mode::few_shot) {
    const auto target_dev = load_corpus(m, "target_dev");
    std::vector<std::string> dev_ids;
    dev_ids.reserve(target_dev.size());
    for (const auto& d : target_dev) dev_ids.push_back(d.dialog_id);
    const auto split_ids = make_fewshot_split(dev_ids, *m.split);
    const std::set<std::string> keep(split_ids.begin(), split_ids.end());
    std::vector<dialog::Dialog> shots;
    for (const auto& d : target_dev) {
      if (keep.count(d.dialog_id) > 0) shots.push_back(d);
    }

    encoder::TrainStage few;
    few.name = "few_shot";
    few.learning_rate = tc.downstream_lr;
    few.patience = tc.patience_downstream;
    few.max_epochs = tc.max_epochs_few_shot;
    if (m.task == Task::dst) {
      few.objective = encoder::Objective::dst;
      // Target-language shots: gold values live in the target value lists.
      few.ontology = &eval_ontology;
      few.batch_size = tc.batch_dst;
      few.dst_train = dst_examples_from_dialogs(shots, vocab, mc.max_len, m.history_window);
      few.dev_score = encoder::dev_dst_scorer(few.dst_train, eval_ontology);
    } else {
      few.objective = encoder::Objective::rs;
      few.batch_size = tc.batch_rr;
      few.lm_train = rs_instances_from_dialogs(shots, vocab, m.rs_positives_per_dialog, per_side,
                                               rng::derive(m.seed, "few_rs"));
      few.dev_score = encoder::dev_loss_scorer(encoder::Objective::rs, few.lm_train);
    }
    encoder::Checkpoint stage_ckpt = encoder::train(ckpt.params, {few}, tc);
    ckpt.params = std::move(stage_ckpt.params);
    for (auto& rec : stage_ckpt.history) ckpt.history.push_back(std::move(rec));
  }

  // Target-language evaluation.
  const auto target_test = load_corpus(m, "target_test");
  RunRecord record;
  record.manifest_digest = m.digest.empty() ? digest::sha256_hex(manifest_to_json(m)) : m.digest;
  record.name = m.name;
  record.mode = m.mode == Mode::zero_shot ? "zero_shot" : "few_shot";
  record.task = m.task == Task::dst ? "dst" : "rr";
  record.target_lang = m.target_lang;
  record.model_label = model_label(m);
  record.shots = m.mode == Mode::few_shot ? m.split->fraction : 0.0;
  record.seed = m.seed;
  if (m.task == Task::dst) {
    record.metric = "jga";
    record.value = evaluate_dst(ckpt.params, vocab, eval_ontology, target_test, m);
  } else {
    record.metric = "r_at_1";
    record.value = evaluate_rr(ckpt.params, vocab, target_test, m);
  }
  record.stages = ckpt.history;
  record.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (out_checkpoint != nullptr) {
    ordered_json prov;
    prov["manifest_digest"] = record.manifest_digest;
    prov["name"] = m.name;
    prov["model_label"] = record.model_label;
    prov["seed"] = m.seed;
    ckpt.provenance = prov.dump();
    *out_checkpoint = std::move(ckpt);
  }
  return record;
}

std::string run_record_to_json(const RunRecord& r) {
  ordered_json j;
  j["v"] = 1;
  j["manifest_digest"] = r.manifest_digest;
  j["name"] = r.name;
  j["mode"] = r.mode;
  j["task"] = r.task;
  j["target_lang"] = r.target_lang;
  j["model"] = r.model_label;
  j["shots"] = r.shots;
  j["metric"] = r.metric;
  j["value"] = r.value;
  ordered_json stages = ordered_json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"name", s.name},
                      {"epochs_run", s.epochs_run},
                      {"best_epoch", s.best_epoch},
                      {"best_score", s.best_score},
                      {"dev_curve", s.dev_curve}});
  }
  j["stages"] = std::move(stages);
  j["wall_clock_sec"] = r.wall_clock_sec;
  j["seed"] = r.seed;
  return j.dump();
}

void append_run_record(const std::string& store_path, const RunRecord& record) {
  const std::string line = run_record_to_json(record) + "\n";
  const int fd = ::open(store_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw ParseError("cannot open run store " + store_path);
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw ParseError("cannot lock run store " + store_path);
  }
  const ssize_t written = ::write(fd, line.data(), line.size());
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size())) {
    throw ParseError("short write to run store " + store_path);
  }
}

std::vector<RunRecord> read_run_records(const std::string& store_path) {
  std::ifstream in(store_path, std::ios::binary);
  if (!in) throw ParseError("cannot open run store " + store_path);
  std::vector<RunRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("run store line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    RunRecord r;
    r.manifest_digest = j.value("manifest_digest", "");
    r.name = j.value("name", "");
    r.mode = j.value("mode", "");
    r.task = j.value("task", "");
    r.target_lang = j.value("target_lang", "");
    r.model_label = j.value("model", "");
    r.shots = j.value("shots", 0.0);
    r.metric = j.value("metric", "");
    r.value = j.value("value", 0.0);
    r.wall_clock_sec = j.value("wall_clock_sec", 0.0);
    r.seed = j.value("seed", std::uint64_t{0});
    for (const auto& s : j.value("stages", ordered_json::array())) {
      encoder::StageRecord rec;
      rec.name = s.value("name", "");
      rec.epochs_run = s.value("epochs_run", 0);
      rec.best_epoch = s.value("best_epoch", 0);
      rec.best_score = s.value("best_score", 0.0);
      if (s.contains("dev_curve")) rec.dev_curve = s["dev_curve"].get<std::vector<double>>();
      r.stages.push_back(std::move(rec));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<AggregateRow> aggregate_records(const std::vector<RunRecord>& records,
                                            const GroupBy& group_by) {
  if (records.empty()) return {};
  const std::string metric = records.front().metric;
  std::map<std::tuple<std::string, std::string, double>, std::pair<double, std::size_t>> groups;
  for (const auto& r : records) {
    if (r.metric != metric) {
      throw ValidationError("cannot aggregate mixed metrics ('" + metric + "' vs '" + r.metric +
                            "')");
    }
    const std::string model = group_by.model ? r.model_label : "*";
    const std::string lang = group_by.language ? r.target_lang : "*";
    const double shots = group_by.shots ? r.shots : -1.0;
    auto& [sum, count] = groups[{model, lang, shots}];
    sum += r.value;
    ++count;
  }
  std::vector<AggregateRow> rows;
  rows.reserve(groups.size());
  for (const auto& [key, agg] : groups) {
    AggregateRow row;
    row.model = std::get<0>(key);
    row.language = std::get<1>(key);
    row.shots = std::get<2>(key);
    row.metric = metric;
    row.mean = agg.first / static_cast<double>(agg.second);
    row.count = agg.second;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_report_table(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "model\tlanguage\tshot_pct\tmetric\tmean\truns\n";
  for (const auto& r : rows) {
    out << r.model << '\t' << r.language << '\t';
    if (r.shots < 0) out << "*";
    else out << r.shots * 100.0;
    out << '\t' << r.metric << '\t' << r.mean << '\t' << r.count << '\n';
  }
}

void write_series(std::ostream& out, const std::vector<AggregateRow>& rows) {
  std::vector<const AggregateRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const AggregateRow* a, const AggregateRow* b) {
    if (a->model != b->model) return a->model < b->model;
    return a->shots < b->shots;
  });
  out << "model\tshot_pct\tmean\n";
  for (const auto* r : sorted) {
    out << r->model << '\t';
    if (r->shots < 0) out << "*";
    else out << r->shots * 100.0;
    out << '\t' << r->mean << '\n';
  }
}

}  // namespace xtod::experiment
