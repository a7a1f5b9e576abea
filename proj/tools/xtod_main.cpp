// xtod: build specialization data from parallel conversational corpora,
// train the reference encoder, and evaluate dialog state tracking and
// response retrieval under zero-/few-shot transfer.
//
// Every subcommand accepts --seed and --config and prints one
// machine-readable JSON summary line on stdout as its final output.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xtod/dialog.hpp"
#include "xtod/digest.hpp"
#include "xtod/encoder.hpp"
#include "xtod/experiment.hpp"
#include "xtod/instances.hpp"
#include "xtod/metrics.hpp"
#include "xtod/rng.hpp"
#include "xtod/subtitles.hpp"
#include "xtod/tokenizer.hpp"

using ordered_json = nlohmann::ordered_json;
using namespace xtod;

namespace {

struct CommonOpts {
  std::uint64_t seed = 0;
  std::string config_path;
};

struct Config {
  encoder::ModelConfig model;
  encoder::TrainConfig train;
  instances::MaskingConfig masking;
  instances::TlmConfig tlm;
  instances::RsConfig rs;
  int history_window = 6;
};

Config load_config(const std::string& path) {
  Config cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open config " + path);
  ordered_json j = ordered_json::parse(in);
  if (j.contains("model")) {
    cfg.model.d_model = j["model"].value("d_model", cfg.model.d_model);
    cfg.model.d_ff = j["model"].value("d_ff", cfg.model.d_ff);
    cfg.model.max_len = j["model"].value("max_len", cfg.model.max_len);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    if (t.contains("lr_grid")) cfg.train.lr_grid = t["lr_grid"].get<std::vector<double>>();
    cfg.train.downstream_lr = t.value("downstream_lr", cfg.train.downstream_lr);
    cfg.train.batch_mlm = t.value("batch_mlm", cfg.train.batch_mlm);
    cfg.train.batch_rs = t.value("batch_rs", cfg.train.batch_rs);
    cfg.train.batch_dst = t.value("batch_dst", cfg.train.batch_dst);
    cfg.train.batch_rr = t.value("batch_rr", cfg.train.batch_rr);
    cfg.train.patience_mlm = t.value("patience_mlm", cfg.train.patience_mlm);
    cfg.train.patience_rs = t.value("patience_rs", cfg.train.patience_rs);
    cfg.train.patience_downstream = t.value("patience_downstream", cfg.train.patience_downstream);
    cfg.train.max_epochs_specialization =
        t.value("max_epochs_specialization", cfg.train.max_epochs_specialization);
    cfg.train.max_epochs_zero_shot =
        t.value("max_epochs_zero_shot", cfg.train.max_epochs_zero_shot);
    cfg.train.max_epochs_few_shot = t.value("max_epochs_few_shot", cfg.train.max_epochs_few_shot);
  }
  if (j.contains("masking")) {
    cfg.masking.mask_rate = j["masking"].value("mask_rate", cfg.masking.mask_rate);
    cfg.masking.min_masked = j["masking"].value("min_masked", cfg.masking.min_masked);
  }
  if (j.contains("tlm")) {
    cfg.tlm.k_min = j["tlm"].value("k_min", cfg.tlm.k_min);
    cfg.tlm.k_max = j["tlm"].value("k_max", cfg.tlm.k_max);
    cfg.tlm.per_side_max = j["tlm"].value("per_side_max", cfg.tlm.per_side_max);
    if (j["tlm"].value("layout", "block") == std::string("alternating")) {
      cfg.tlm.layout = instances::TlmLayout::alternating;
    }
  }
  if (j.contains("rs")) {
    const auto& r = j["rs"];
    cfg.rs.m_min = r.value("m_min", cfg.rs.m_min);
    cfg.rs.m_max = r.value("m_max", cfg.rs.m_max);
    cfg.rs.hard_negatives_per_positive =
        r.value("hard_negatives_per_positive", cfg.rs.hard_negatives_per_positive);
    cfg.rs.min_hard_offset = r.value("min_hard_offset", cfg.rs.min_hard_offset);
    cfg.rs.context_min = r.value("context_min", cfg.rs.context_min);
    cfg.rs.context_max = r.value("context_max", cfg.rs.context_max);
    cfg.rs.positives_per_dialog = r.value("positives_per_dialog", cfg.rs.positives_per_dialog);
    cfg.rs.per_side_max = r.value("per_side_max", cfg.rs.per_side_max);
    cfg.rs.reverse_direction = r.value("reverse_direction", cfg.rs.reverse_direction);
  }
  cfg.history_window = j.value("history_window", cfg.history_window);
  return cfg;
}

void print_summary(const ordered_json& j) { std::cout << j.dump() << std::endl; }

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string dialog_history(const dialog::Dialog& d, std::size_t turn, int window) {
  const std::size_t begin =
      turn + 1 > static_cast<std::size_t>(window) ? turn + 1 - window : 0;
  std::string history;
  for (std::size_t i = begin; i <= turn; ++i) {
    if (!history.empty()) history += ' ';
    history += d.turns[i].text;
  }
  return history;
}

int cmd_ingest(const CommonOpts& common, const std::string& input, const std::string& out_path,
               int min_len, int max_len, unsigned threads) {
  auto in = open_input(input);
  const auto pairs = subtitles::load_parallel_pairs(in);
  subtitles::SegmentReport report;
  const auto dialogs =
      subtitles::segment_dialogs(pairs, min_len, max_len, common.seed, &report, threads);
  if (!out_path.empty()) {
    auto out = open_output(out_path);
    for (std::size_t w = 0; w < dialogs.size(); ++w) {
      for (const auto& p : dialogs[w].pairs) {
        out << w << '\t' << p.imdb_id << '\t' << p.line_index << '\t' << p.src_text << '\t'
            << p.tgt_text << '\n';
      }
    }
  }
  print_summary({{"command", "ingest"},
                 {"status", "ok"},
                 {"pairs", report.pairs_total},
                 {"movies", report.movies_processed},
                 {"movies_skipped", report.movies_skipped},
                 {"dialogs", dialogs.size()},
                 {"pairs_used", report.pairs_used},
                 {"seed", common.seed}});
  return 0;
}

int cmd_vocab(const CommonOpts& common, const std::string& input, const std::string& out_path,
              int target_size, const std::string& format) {
  std::vector<std::string> sentences;
  if (format == "flat") {
    auto in = open_input(input);
    for (const auto& [lang, text] : subtitles::read_flat_corpus(in).sentences) {
      sentences.push_back(text);
    }
  } else if (format == "pairs") {
    auto in = open_input(input);
    for (const auto& p : subtitles::load_parallel_pairs(in)) {
      sentences.push_back(p.src_text);
      sentences.push_back(p.tgt_text);
    }
  } else {
    sentences = read_lines(input);
  }
  const auto vocab = tokenizer::build_vocab(sentences, target_size);
  auto out = open_output(out_path);
  tokenizer::write_vocab(out, vocab);
  print_summary({{"command", "vocab"},
                 {"status", "ok"},
                 {"sentences", sentences.size()},
                 {"size", vocab.size()},
                 {"out", out_path},
                 {"seed", common.seed}});
  return 0;
}

int cmd_gen(const CommonOpts& common, const Config& cfg, const std::string& kind,
            const std::string& vocab_path, const std::string& input, const std::string& out_path,
            unsigned threads) {
  const auto vocab = tokenizer::read_vocab_file(vocab_path);
  std::vector<instances::TrainingInstance> batch;
  if (kind == "mlm") {
    auto in = open_input(input);
    const auto flat = subtitles::read_flat_corpus(in);
    std::vector<tokenizer::TokenSequence> seqs;
    seqs.reserve(flat.sentences.size());
    for (const auto& [lang, text] : flat.sentences) {
      seqs.push_back(tokenizer::encode(text, vocab, cfg.model.max_len));
    }
    batch = instances::gen_mlm_batch(seqs, cfg.masking, vocab.size(), common.seed, threads);
  } else {
    auto in = open_input(input);
    const auto pairs = subtitles::load_parallel_pairs(in);
    const auto windows = subtitles::segment_dialogs(
        pairs, 2, 15, rng::derive(common.seed, "segment"), nullptr, threads);
    if (kind == "tlm") {
      batch = instances::gen_tlm_batch(windows, vocab, cfg.tlm, cfg.masking, common.seed, threads);
    } else if (kind == "rs_mono" || kind == "rs_x") {
      instances::RsConfig rs = cfg.rs;
      rs.mode = kind == "rs_mono" ? instances::RsMode::mono : instances::RsMode::cross;
      batch = instances::gen_rs(windows, vocab, rs, common.seed, threads);
    } else {
      throw ValidationError("unknown kind '" + kind + "' (mlm|tlm|rs_mono|rs_x)");
    }
  }
  auto out = open_output(out_path);
  instances::write_instances(out, batch);
  const auto counts = instances::count_rs(batch);
  print_summary({{"command", "gen"},
                 {"status", "ok"},
                 {"kind", kind},
                 {"instances", batch.size()},
                 {"rs_positives", counts.positives},
                 {"rs_hard_negatives", counts.hard_negatives},
                 {"rs_easy_negatives", counts.easy_negatives},
                 {"out", out_path},
                 {"seed", common.seed}});
  return 0;
}

int cmd_train(const CommonOpts& common, const Config& cfg, const std::string& vocab_path,
              const std::vector<std::string>& schedule, const std::string& ontology_path,
              const std::string& out_path) {
  const auto vocab = tokenizer::read_vocab_file(vocab_path);
  encoder::ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  encoder::TrainConfig tc = cfg.train;
  tc.seed = common.seed;

  dialog::Ontology ontology;
  bool with_heads = false;
  if (!ontology_path.empty()) {
    auto oin = open_input(ontology_path);
    ontology = dialog::parse_ontology(oin);
    with_heads = true;
  }

  std::vector<encoder::TrainStage> stages;
  for (std::size_t si = 0; si < schedule.size(); ++si) {
    const auto colon = schedule[si].find(':');
    if (colon == std::string::npos) {
      throw ValidationError("schedule entries look like objective:instances.jsonl");
    }
    const std::string objective = schedule[si].substr(0, colon);
    const std::string path = schedule[si].substr(colon + 1);
    auto in = open_input(path);
    auto all = instances::read_instances(in);

    encoder::TrainStage stage;
    stage.name = "stage" + std::to_string(si) + ":" + objective;
    if (objective == "mlm" || objective == "tlm") {
      stage.objective = encoder::Objective::mlm;
      stage.batch_size = tc.batch_mlm;
      stage.patience = tc.patience_mlm;
    } else if (objective == "rs") {
      stage.objective = encoder::Objective::rs;
      stage.batch_size = tc.batch_rs;
      stage.patience = tc.patience_rs;
    } else {
      throw ValidationError("unknown objective '" + objective + "' (mlm|tlm|rs)");
    }
    stage.max_epochs = tc.max_epochs_specialization;
    stage.learning_rate = tc.lr_grid.front();
    // Hold out 10% as the early-stopping dev stream.
    std::vector<instances::TrainingInstance> dev;
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::Rng shuffle_rng(rng::derive(common.seed, "cli_dev_split", si));
    shuffle_rng.shuffle(order);
    const std::size_t n_dev = std::max<std::size_t>(1, all.size() / 10);
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < n_dev) dev.push_back(all[order[i]]);
      else stage.lm_train.push_back(all[order[i]]);
    }
    stage.dev_score = encoder::dev_loss_scorer(stage.objective, std::move(dev));
    stages.push_back(std::move(stage));
  }

  encoder::ModelParams params = encoder::ModelParams::init(
      mc, rng::derive(common.seed, "model_init"), with_heads ? &ontology : nullptr);
  encoder::Checkpoint ckpt = encoder::train(std::move(params), stages, tc);
  ordered_json prov;
  prov["schedule"] = schedule;
  prov["seed"] = common.seed;
  ckpt.provenance = prov.dump();
  encoder::save_checkpoint_file(out_path, ckpt);

  ordered_json stage_summaries = ordered_json::array();
  for (const auto& rec : ckpt.history) {
    stage_summaries.push_back({{"name", rec.name},
                               {"epochs_run", rec.epochs_run},
                               {"best_epoch", rec.best_epoch},
                               {"best_score", rec.best_score}});
  }
  print_summary({{"command", "train"},
                 {"status", "ok"},
                 {"stages", stage_summaries},
                 {"checkpoint", out_path},
                 {"seed", common.seed}});
  return 0;
}

int cmd_eval_dst(const CommonOpts& common, const Config& cfg, const std::string& ckpt_path,
                 const std::string& vocab_path, const std::string& ontology_path,
                 const std::string& corpus_path, const std::string& predictions_path,
                 const std::string& gold_path, const std::string& report_path) {
  metrics::JgaReport report;
  if (!ckpt_path.empty()) {
    const auto ckpt = encoder::load_checkpoint_file(ckpt_path);
    const auto vocab = tokenizer::read_vocab_file(vocab_path);
    auto oin = open_input(ontology_path);
    const auto ontology = dialog::parse_ontology(oin);
    const auto dialogs =
        dialog::parse_dialog_corpus_file(corpus_path, dialog::CorpusFormat::multi2woz);

    std::vector<metrics::DialogPredictions> preds, gold;
    for (const auto& d : dialogs) {
      metrics::DialogPredictions p, g;
      p.dialog_id = g.dialog_id = d.dialog_id;
      g.turns = dialog::cumulative_states(d);
      for (std::size_t t = 0; t < d.turns.size(); ++t) {
        if (d.turns[t].speaker != dialog::Speaker::user) continue;
        const auto tokens = tokenizer::encode(dialog_history(d, t, cfg.history_window), vocab,
                                              cfg.model.max_len);
        p.turns.push_back(encoder::predict_state(ckpt.params, tokens, ontology));
      }
      preds.push_back(std::move(p));
      gold.push_back(std::move(g));
    }
    if (!predictions_path.empty()) {
      auto out = open_output(predictions_path);
      metrics::write_dst_predictions(out, preds);
    }
    report = metrics::joint_goal_accuracy(preds, gold);
  } else {
    // Offline mode: compare a prediction file against a gold corpus.
    auto pin = open_input(predictions_path);
    const auto preds = metrics::read_dst_predictions(pin);
    const auto dialogs =
        dialog::parse_dialog_corpus_file(gold_path, dialog::CorpusFormat::multi2woz);
    std::vector<metrics::DialogPredictions> gold;
    for (const auto& d : dialogs) {
      gold.push_back({d.dialog_id, dialog::cumulative_states(d)});
    }
    report = metrics::joint_goal_accuracy(preds, gold);
  }
  if (!report_path.empty()) {
    auto out = open_output(report_path);
    out << metrics::to_json(report);
  }
  print_summary({{"command", "eval-dst"},
                 {"status", "ok"},
                 {"correct_turns", report.correct_turns},
                 {"total_turns", report.total_turns},
                 {"jga", report.accuracy},
                 {"seed", common.seed}});
  return 0;
}

int cmd_eval_rr(const CommonOpts& common, const Config& cfg, const std::string& ckpt_path,
                const std::string& vocab_path, const std::string& corpus_path, std::size_t n,
                std::size_t max_contexts, const std::string& report_path) {
  const auto ckpt = encoder::load_checkpoint_file(ckpt_path);
  const auto vocab = tokenizer::read_vocab_file(vocab_path);
  const auto dialogs =
      dialog::parse_dialog_corpus_file(corpus_path, dialog::CorpusFormat::multi2woz);
  auto set = experiment::rr_eval_from_dialogs(dialogs, cfg.history_window);

  std::vector<std::size_t> context_ids(set.contexts.size());
  for (std::size_t i = 0; i < context_ids.size(); ++i) context_ids[i] = i;
  if (max_contexts > 0 && context_ids.size() > max_contexts) {
    rng::Rng ctx_rng(rng::derive(common.seed, "rr_eval_contexts"));
    auto sampled = ctx_rng.sample_indices(context_ids.size(), max_contexts);
    std::sort(sampled.begin(), sampled.end());
    context_ids = std::move(sampled);
  }
  std::vector<std::size_t> true_ids;
  true_ids.reserve(context_ids.size());
  for (std::size_t ci : context_ids) true_ids.push_back(set.true_response_ids[ci]);
  const auto candidate_sets =
      metrics::sample_rr_candidates(true_ids, set.pool, n, rng::derive(common.seed, "rr_eval"));

  std::vector<metrics::Ranking> rankings;
  rankings.reserve(candidate_sets.size());
  for (std::size_t i = 0; i < candidate_sets.size(); ++i) {
    std::vector<std::string> texts;
    texts.reserve(candidate_sets[i].candidate_ids.size());
    for (std::size_t id : candidate_sets[i].candidate_ids) texts.push_back(set.pool[id]);
    const auto ranking =
        encoder::score_candidates(ckpt.params, vocab, set.contexts[context_ids[i]], texts,
                                  static_cast<std::size_t>(cfg.model.max_len) / 2);
    rankings.push_back({ranking.order, candidate_sets[i].true_position});
  }
  auto report = metrics::recall_at_k(rankings, 1);
  report.sampling_seed = common.seed;
  if (!report_path.empty()) {
    auto out = open_output(report_path);
    out << metrics::to_json(report);
  }
  print_summary({{"command", "eval-rr"},
                 {"status", "ok"},
                 {"n", report.n},
                 {"contexts", report.total_contexts},
                 {"hits", report.hits},
                 {"r_at_1", report.recall},
                 {"seed", common.seed}});
  return 0;
}

int cmd_kappa(const CommonOpts& common, const std::string& a_path, const std::string& b_path,
              const std::string& report_path) {
  auto ain = open_input(a_path);
  auto bin = open_input(b_path);
  const auto a = dialog::parse_qc_judgments(ain);
  const auto b = dialog::parse_qc_judgments(bin);
  const auto r = metrics::qc_kappa(a, b);
  if (!report_path.empty()) {
    auto out = open_output(report_path);
    out << metrics::to_json(r.conjunction);
  }
  print_summary({{"command", "kappa"},
                 {"status", "ok"},
                 {"items", a.size()},
                 {"kappa_utterance", r.utterance.kappa},
                 {"kappa_slot_values", r.slot_values.kappa},
                 {"kappa_conjunction", r.conjunction.kappa},
                 {"p_o_conjunction", r.conjunction.p_o},
                 {"p_e_conjunction", r.conjunction.p_e},
                 {"seed", common.seed}});
  return 0;
}

int cmd_split(const CommonOpts& common, const std::string& corpus_path,
              const std::string& ids_path, double fraction, bool independent,
              const std::string& out_path) {
  std::vector<std::string> ids;
  if (!corpus_path.empty()) {
    for (const auto& d :
         dialog::parse_dialog_corpus_file(corpus_path, dialog::CorpusFormat::multi2woz)) {
      ids.push_back(d.dialog_id);
    }
  } else if (!ids_path.empty()) {
    ids = read_lines(ids_path);
  } else {
    throw ValidationError("split needs --corpus or --ids");
  }
  experiment::SplitSpec spec;
  spec.fraction = fraction;
  spec.seed = common.seed;
  spec.nested = !independent;
  const auto split = experiment::make_fewshot_split(ids, spec);
  if (!out_path.empty()) {
    auto out = open_output(out_path);
    for (const auto& id : split) out << id << '\n';
  } else {
    for (const auto& id : split) std::cerr << id << '\n';
  }
  print_summary({{"command", "split"},
                 {"status", "ok"},
                 {"dev_size", ids.size()},
                 {"fraction", fraction},
                 {"split_size", split.size()},
                 {"nested", spec.nested},
                 {"seed", common.seed}});
  return 0;
}

int cmd_run(const CommonOpts& common, const std::string& manifest_path, const std::string& store,
            const std::string& ckpt_path) {
  auto manifest = experiment::load_manifest(manifest_path);
  if (common.seed != 0) manifest.seed = common.seed;
  encoder::Checkpoint ckpt;
  const auto record = experiment::run_experiment(manifest, ckpt_path.empty() ? nullptr : &ckpt);
  if (!store.empty()) experiment::append_run_record(store, record);
  if (!ckpt_path.empty()) encoder::save_checkpoint_file(ckpt_path, ckpt);
  print_summary(ordered_json::parse(experiment::run_record_to_json(record)));
  return 0;
}

int cmd_report(const CommonOpts& common, const std::string& store, const std::string& group_by,
               const std::string& table_path, const std::string& series_path) {
  const auto records = experiment::read_run_records(store);
  experiment::GroupBy gb;
  gb.model = group_by.find("model") != std::string::npos;
  gb.language = group_by.find("language") != std::string::npos;
  gb.shots = group_by.find("shots") != std::string::npos;
  const auto rows = experiment::aggregate_records(records, gb);
  if (!table_path.empty()) {
    auto out = open_output(table_path);
    experiment::write_report_table(out, rows);
  }
  if (!series_path.empty()) {
    auto out = open_output(series_path);
    experiment::write_series(out, rows);
  }
  print_summary({{"command", "report"},
                 {"status", "ok"},
                 {"records", records.size()},
                 {"groups", rows.size()},
                 {"seed", common.seed}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-lingual task-oriented dialog specialization toolkit"};
  app.require_subcommand(1);

  CommonOpts common;
  app.add_option("--seed", common.seed, "global random seed")->capture_default_str();
  app.add_option("--config", common.config_path, "JSON config file");

  std::string in_path, out_path, vocab_path, kind = "mlm", format = "text";
  int min_len = 2, max_len = 15, target_size = 8192;
  unsigned threads = 1;
  auto* ingest = app.add_subcommand("ingest", "segment parallel subtitle pairs into dialogs");
  ingest->add_option("--input", in_path, "normalized parallel pair file (TSV)")->required();
  ingest->add_option("--out", out_path, "write segmented windows (TSV with window id)");
  ingest->add_option("--min-len", min_len);
  ingest->add_option("--max-len", max_len);
  ingest->add_option("--threads", threads);

  auto* vocab_cmd = app.add_subcommand("vocab", "build a subword vocabulary");
  vocab_cmd->add_option("--input", in_path, "corpus file")->required();
  vocab_cmd->add_option("--out", out_path, "vocab file")->required();
  vocab_cmd->add_option("--target-size", target_size);
  vocab_cmd->add_option("--format", format, "text|flat|pairs");

  auto* gen = app.add_subcommand("gen", "generate training instances");
  gen->add_option("--kind", kind, "mlm|tlm|rs_mono|rs_x")->required();
  gen->add_option("--vocab", vocab_path)->required();
  gen->add_option("--input", in_path, "flat corpus (mlm) or parallel pairs")->required();
  gen->add_option("--out", out_path)->required();
  gen->add_option("--threads", threads);

  std::vector<std::string> schedule;
  auto* train = app.add_subcommand("train", "train the reference encoder on instance files");
  train->add_option("--vocab", vocab_path)->required();
  train->add_option("--stage", schedule, "objective:instances.jsonl (repeatable, in order)")
      ->required();
  train->add_option("--out", out_path, "checkpoint file")->required();
  std::string train_ontology;
  train->add_option("--ontology", train_ontology,
                    "attach dialog-state heads for this ontology");

  std::string ckpt_path, ontology_path, predictions_path, gold_path, report_path;
  auto* eval_dst = app.add_subcommand("eval-dst", "joint goal accuracy evaluation");
  eval_dst->add_option("--checkpoint", ckpt_path);
  eval_dst->add_option("--vocab", vocab_path);
  eval_dst->add_option("--ontology", ontology_path);
  eval_dst->add_option("--corpus", in_path, "gold corpus (canonical schema)");
  eval_dst->add_option("--predictions", predictions_path, "prediction file (write or compare)");
  eval_dst->add_option("--gold", gold_path, "gold corpus when comparing prediction files");
  eval_dst->add_option("--report", report_path);

  std::size_t rr_n = 100, rr_max_contexts = 0;
  auto* eval_rr = app.add_subcommand("eval-rr", "response retrieval recall@1");
  eval_rr->add_option("--checkpoint", ckpt_path)->required();
  eval_rr->add_option("--vocab", vocab_path)->required();
  eval_rr->add_option("--corpus", in_path)->required();
  eval_rr->add_option("--n", rr_n, "candidate set size");
  eval_rr->add_option("--max-contexts", rr_max_contexts, "0 = all");
  eval_rr->add_option("--report", report_path);

  std::string b_path;
  auto* kappa = app.add_subcommand("kappa", "inter-annotator agreement over QC files");
  kappa->add_option("--a", in_path, "first annotator judgment file")->required();
  kappa->add_option("--b", b_path, "second annotator judgment file")->required();
  kappa->add_option("--report", report_path);

  std::string ids_path;
  double fraction = 0.01;
  bool independent = false;
  auto* split = app.add_subcommand("split", "deterministic few-shot dialog split");
  split->add_option("--corpus", in_path, "corpus whose dialog ids are split");
  split->add_option("--ids", ids_path, "plain id list (one per line)");
  split->add_option("--fraction", fraction)->required();
  split->add_flag("--independent", independent, "resample instead of nested prefixes");
  split->add_option("--out", out_path);

  std::string store_path;
  auto* run = app.add_subcommand("run", "run a manifest end to end");
  run->add_option("--manifest", in_path)->required();
  run->add_option("--store", store_path, "append the run record here");
  run->add_option("--save-checkpoint", ckpt_path);

  std::string group_by = "model,language,shots", series_path;
  auto* report = app.add_subcommand("report", "aggregate run records");
  report->add_option("--store", store_path)->required();
  report->add_option("--group-by", group_by);
  report->add_option("--table", out_path);
  report->add_option("--series", series_path);

  // Every subcommand takes --seed and --config directly.
  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--seed", common.seed, "global random seed");
    sub->add_option("--config", common.config_path, "JSON config file");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const Config cfg = load_config(common.config_path);
    if (ingest->parsed()) return cmd_ingest(common, in_path, out_path, min_len, max_len, threads);
    if (vocab_cmd->parsed()) return cmd_vocab(common, in_path, out_path, target_size, format);
    if (gen->parsed()) return cmd_gen(common, cfg, kind, vocab_path, in_path, out_path, threads);
    if (train->parsed()) {
      return cmd_train(common, cfg, vocab_path, schedule, train_ontology, out_path);
    }
    if (eval_dst->parsed()) {
      return cmd_eval_dst(common, cfg, ckpt_path, vocab_path, ontology_path, in_path,
                          predictions_path, gold_path, report_path);
    }
    if (eval_rr->parsed()) {
      return cmd_eval_rr(common, cfg, ckpt_path, vocab_path, in_path, rr_n, rr_max_contexts,
                         report_path);
    }
    if (kappa->parsed()) return cmd_kappa(common, in_path, b_path, report_path);
    if (split->parsed()) {
      return cmd_split(common, in_path, ids_path, fraction, independent, out_path);
    }
    if (run->parsed()) return cmd_run(common, in_path, store_path, ckpt_path);
    if (report->parsed()) {
      return cmd_report(common, store_path, group_by, out_path, series_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    ordered_json summary;
    summary["command"] = app.get_subcommands().empty()
                             ? std::string("?")
                             : app.get_subcommands().front()->get_name();
    summary["status"] = "error";
    summary["message"] = e.what();
    print_summary(summary);
    return 1;
  }
  return 0;
}
