#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xtod/dialog.hpp"
#include "xtod/encoder.hpp"
#include "xtod/errors.hpp"
#include "xtod/metrics.hpp"
#include "xtod/tokenizer.hpp"

namespace xtod::experiment {

struct SplitSpec {
  double fraction = 0.01;  // open set; the ladder {1,5,10,50,100}% mirrors the study design
  std::uint64_t seed = 0;
  bool nested = true;  // nested splits are prefixes of one seeded permutation

  void validate() const;
};

// Ordered dialog-id subset of size round(fraction * |dev|). With nested=true,
// split(p1) is a prefix of split(p2) for p1 < p2 under the same seed. A
// fraction that rounds to zero dialogs is an error.
std::vector<std::string> make_fewshot_split(const std::vector<std::string>& dev_dialog_ids,
                                            const SplitSpec& spec);

enum class Mode { zero_shot, few_shot };
enum class Task { dst, rr };

struct DataRef {
  std::string path;
  std::string sha256;
};

struct SpecializationStage {
  std::string objective;  // mlm | tlm | rs_mono | rs_x
  std::string data;       // key into ExperimentManifest::data
};

struct ExperimentManifest {
  std::string name;
  Mode mode = Mode::zero_shot;
  Task task = Task::dst;
  std::string source_lang = "en";
  std::string target_lang;
  std::vector<SpecializationStage> specialization;
  std::optional<SplitSpec> split;  // required iff mode == few_shot
  encoder::TrainConfig train;
  encoder::ModelConfig model;
  int history_window = 6;       // dialog turns fed to DST/RR heads
  std::size_t rr_candidates = 100;  // candidate set size for RR evaluation
  std::size_t rr_max_contexts = 200;  // 0 = evaluate every context
  int rs_positives_per_dialog = 1;
  std::uint64_t seed = 0;
  std::map<std::string, DataRef> data;

  std::string digest;  // sha256 of the canonical manifest bytes

  void validate() const;  // shape checks; no file access
};

// Canonical JSON round trip. write_manifest recomputes every data digest
// from the file contents; load_manifest verifies them and fills `digest`.
ExperimentManifest load_manifest(const std::string& path, bool verify_digests = true);
void write_manifest(const std::string& path, ExperimentManifest manifest);
std::string manifest_to_json(const ExperimentManifest& manifest);

struct RunRecord {
  std::string manifest_digest;
  std::string name;
  std::string mode;
  std::string task;
  std::string target_lang;
  std::string model_label;  // specialization schedule, e.g. "tlm+rs_mono"
  double shots = 1.0;       // fraction of the dev set; 1.0 in zero-shot runs
  std::string metric;       // "jga" | "r_at_1"
  double value = 0.0;
  std::vector<encoder::StageRecord> stages;
  double wall_clock_sec = 0.0;
  std::uint64_t seed = 0;
};

// Runs the full pipeline described by the manifest: specialization stages,
// source-language fine-tuning, optional few-shot target fine-tuning, then
// target-language evaluation. Deterministic given the manifest (wall clock
// aside). Optionally returns the final parameters through out_checkpoint.
RunRecord run_experiment(const ExperimentManifest& manifest,
                         encoder::Checkpoint* out_checkpoint = nullptr);

// Append-only run store (JSON lines, advisory file lock around the append).
void append_run_record(const std::string& store_path, const RunRecord& record);
std::vector<RunRecord> read_run_records(const std::string& store_path);
std::string run_record_to_json(const RunRecord& record);

struct GroupBy {
  bool model = true;
  bool language = true;
  bool shots = true;
};

struct AggregateRow {
  std::string model;     // "*" when not grouped
  std::string language;  // "*" when not grouped
  double shots = 1.0;    // -1 when not grouped
  std::string metric;
  double mean = 0.0;
  std::size_t count = 0;
};

// Per-group mean of the final metric. Throws when records mix metrics.
// Output order is key-sorted, so aggregation is permutation-invariant.
std::vector<AggregateRow> aggregate_records(const std::vector<RunRecord>& records,
                                            const GroupBy& group_by);

// Table: model <TAB> language <TAB> shot_pct <TAB> metric <TAB> mean <TAB> runs.
void write_report_table(std::ostream& out, const std::vector<AggregateRow>& rows);
// Plot-ready series keyed by shot fraction: model <TAB> shot_pct <TAB> mean.
void write_series(std::ostream& out, const std::vector<AggregateRow>& rows);

// --- task-data adapters (shared by run_experiment and the CLI) ---

// Per user turn: encoded history (last `history_window` turns) plus the gold
// cumulative state.
std::vector<encoder::DstExample> dst_examples_from_dialogs(
    const std::vector<dialog::Dialog>& dialogs, const tokenizer::Vocab& vocab,
    std::size_t max_len, int history_window);

// Response-selection training instances over task dialogs (dialog ids play
// the role of movie ids, turn indices the role of line indices).
std::vector<instances::TrainingInstance> rs_instances_from_dialogs(
    const std::vector<dialog::Dialog>& dialogs, const tokenizer::Vocab& vocab,
    int positives_per_dialog, std::size_t per_side_max, std::uint64_t seed);

struct RrEvalSet {
  std::vector<std::string> contexts;
  std::vector<std::size_t> true_response_ids;  // into `pool`
  std::vector<std::string> pool;               // every candidate response
};
RrEvalSet rr_eval_from_dialogs(const std::vector<dialog::Dialog>& dialogs, int history_window);

}  // namespace xtod::experiment
