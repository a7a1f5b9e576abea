#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "xtod/dialog.hpp"
#include "xtod/errors.hpp"

namespace xtod::metrics {

// Value normalization applied symmetrically to predictions and gold before
// comparison: NFKC-subset fold + trim + case fold, then an optional synonym
// table lookup (e.g. weekday variants that annotators used interchangeably).
struct NormalizationRules {
  std::map<std::string, std::string> synonyms;  // normalized form -> canonical

  std::string canonical(const std::string& value) const;
};

struct JgaReport {
  std::size_t correct_turns = 0;
  std::size_t total_turns = 0;
  double accuracy = 0.0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_dialog;  // id -> (correct, total)
};

// Per-dialog turn-aligned states. Prediction turns must match gold turns.
struct DialogPredictions {
  std::string dialog_id;
  std::vector<dialog::DialogState> turns;  // cumulative states, one per user turn
};

// A turn counts as correct iff every (domain, slot) key present on either
// side matches after normalization, missing keys reading as "none".
JgaReport joint_goal_accuracy(const std::vector<DialogPredictions>& predictions,
                              const std::vector<DialogPredictions>& gold,
                              const NormalizationRules& norm = {});

struct RrCandidateSet {
  std::size_t context_id = 0;
  std::vector<std::size_t> candidate_ids;  // indices into the response pool
  std::size_t true_position = 0;           // where the true response sits
};

// Per context: the true response plus n-1 distinct distractors sampled
// uniformly without replacement from the pool, excluding the true response
// and any pool entry with identical text (ties would make rank@1 ill-posed).
// contexts maps context_id -> true response pool index.
std::vector<RrCandidateSet> sample_rr_candidates(
    const std::vector<std::size_t>& true_response_ids,
    const std::vector<std::string>& response_pool, std::size_t n, std::uint64_t seed,
    unsigned threads = 1);

struct RrReport {
  std::size_t n = 100;
  std::size_t k = 1;
  std::size_t hits = 0;
  std::size_t total_contexts = 0;
  double recall = 0.0;
  std::uint64_t sampling_seed = 0;
};

// A ranking per context: candidate positions in descending score order plus
// the position the true response occupies in the candidate list.
struct Ranking {
  std::vector<std::size_t> order;
  std::size_t true_position = 0;
};

// Hit iff the true response ranks within the top k (1-based). Throws when a
// ranking does not contain the true position exactly once.
RrReport recall_at_k(const std::vector<Ranking>& rankings, std::size_t k = 1);

struct KappaReport {
  std::size_t n11 = 0, n10 = 0, n01 = 0, n00 = 0;  // contingency counts (a x b)
  double p_o = 0.0;
  double p_e = 0.0;
  double kappa = 0.0;
  bool degenerate = false;  // p_e == 1 with imperfect agreement (kappa undefined)
};

// Cohen's kappa for two binary annotators: (p_o - p_e) / (1 - p_e), with
// p_e from the marginal products. When p_e == 1 (both annotators constant
// and equal), kappa is 1 when p_o == 1 and flagged degenerate otherwise.
KappaReport cohen_kappa(const std::vector<int>& judgments_a, const std::vector<int>& judgments_b);

// Kappa over QC files: per question and on the conjunction of both.
struct QcKappaReport {
  KappaReport utterance;
  KappaReport slot_values;
  KappaReport conjunction;
};
QcKappaReport qc_kappa(const std::vector<dialog::QcJudgment>& a,
                       const std::vector<dialog::QcJudgment>& b);

// Uniform sample without replacement of `quota` dialog ids per split,
// deterministic via per-split derived seeds. When quota == 0 it defaults to
// round(fraction * split size).
std::map<std::string, std::vector<std::string>> qc_sample(
    const std::map<std::string, std::vector<std::string>>& splits_to_ids, double fraction,
    std::size_t per_split_quota, std::uint64_t seed);

// Report serialization (JSON), seeds and counts embedded.
std::string to_json(const JgaReport& r);
std::string to_json(const RrReport& r);
std::string to_json(const KappaReport& r);
JgaReport jga_from_json(std::istream& in);
RrReport rr_from_json(std::istream& in);
KappaReport kappa_from_json(std::istream& in);

// DST prediction file: {dialog_id: [ {"domain-slot": value, ...}, ... ]}.
std::vector<DialogPredictions> read_dst_predictions(std::istream& in);
void write_dst_predictions(std::ostream& out, const std::vector<DialogPredictions>& preds);

}  // namespace xtod::metrics
