#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xtod/errors.hpp"
#include "xtod/subtitles.hpp"
#include "xtod/tokenizer.hpp"

namespace xtod::instances {

struct MaskingConfig {
  double mask_rate = 0.15;
  double replace_mask_p = 0.8;
  double replace_random_p = 0.1;
  double keep_p = 0.1;
  int min_masked = 1;

  void validate() const;
};

enum class TlmLayout { block, alternating };

struct TlmConfig {
  int k_min = 2;
  int k_max = 15;
  TlmLayout layout = TlmLayout::block;
  std::size_t per_side_max = 128;

  void validate() const;
};

enum class RsMode { mono, cross };

struct RsConfig {
  RsMode mode = RsMode::mono;
  int m_min = 1;  // easy negatives per positive
  int m_max = 3;
  int hard_negatives_per_positive = 1;
  int min_hard_offset = 2;  // first non-immediate follow-up
  int context_min = 1;      // context utterances
  int context_max = 3;
  int positives_per_dialog = 1;
  bool reverse_direction = false;  // cross mode: source context, target response
  std::size_t per_side_max = 128;

  void validate() const;
};

enum class InstanceKind { mlm, tlm, rs };

struct Provenance {
  std::string imdb_id;
  std::string dialog_id;
  int line_begin = -1;  // context span, inclusive
  int line_end = -1;
  std::string resp_imdb_id;  // rs only
  int resp_line = -1;        // rs only
  std::uint64_t seed = 0;

  bool operator==(const Provenance&) const = default;
};

struct TrainingInstance {
  InstanceKind kind = InstanceKind::mlm;
  tokenizer::TokenSequence tokens;
  // position -> original id, mlm/tlm only; never at special-token positions.
  std::map<int, int> mlm_labels;
  bool rs_label = false;  // rs only
  Provenance provenance;

  bool operator==(const TrainingInstance&) const = default;
};

// Masks round(mask_rate * non_special_count) positions (at least min_masked)
// chosen uniformly without replacement; each becomes [MASK] / a random
// non-special id / its original id with probability 0.8/0.1/0.1. Throws when
// the sequence has no non-special token.
TrainingInstance gen_mlm(const tokenizer::TokenSequence& seq, const MaskingConfig& cfg,
                         int vocab_size, std::uint64_t seed);

// One translation-LM instance: K consecutive pairs (K uniform on
// [k_min, min(k_max, |pd|)]) at a seeded start offset, source block [SEP]
// target block, masked across both sides. Returns nullopt when the dialog is
// shorter than k_min (skip, not an error).
std::optional<TrainingInstance> gen_tlm(const subtitles::ParallelDialog& pd,
                                        const tokenizer::Vocab& vocab, const TlmConfig& cfg,
                                        const MaskingConfig& mask, std::uint64_t seed);

// Response-selection instances over a dialog pool: per positive, the true
// next utterance (label 1), hard negatives from the same movie at offset >=
// min_hard_offset past the context (label 0), and m ~ U{m_min..m_max} easy
// negatives from other movies (label 0). mono: target-language context and
// responses; cross: target-language context, source-language responses.
// Requires >= 2 distinct imdb_ids.
std::vector<TrainingInstance> gen_rs(const std::vector<subtitles::ParallelDialog>& pool,
                                     const tokenizer::Vocab& vocab, const RsConfig& cfg,
                                     std::uint64_t seed, unsigned threads = 1);

struct RsCounts {
  std::size_t positives = 0;
  std::size_t hard_negatives = 0;
  std::size_t easy_negatives = 0;
};
RsCounts count_rs(const std::vector<TrainingInstance>& batch);

// Batch helpers with per-item derived seeds (parallel == serial).
std::vector<TrainingInstance> gen_mlm_batch(const std::vector<tokenizer::TokenSequence>& seqs,
                                            const MaskingConfig& cfg, int vocab_size,
                                            std::uint64_t seed, unsigned threads = 1);
std::vector<TrainingInstance> gen_tlm_batch(const std::vector<subtitles::ParallelDialog>& pool,
                                            const tokenizer::Vocab& vocab, const TlmConfig& cfg,
                                            const MaskingConfig& mask, std::uint64_t seed,
                                            unsigned threads = 1);

// Original ids with mlm_labels applied back (undoes masking).
std::vector<int> restore_original_ids(const TrainingInstance& inst);

// Instance file: one JSON record per line; see docs/formats.md.
void write_instances(std::ostream& out, const std::vector<TrainingInstance>& batch);
std::vector<TrainingInstance> read_instances(std::istream& input);

}  // namespace xtod::instances
