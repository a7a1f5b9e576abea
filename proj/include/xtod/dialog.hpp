#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xtod/errors.hpp"

namespace xtod::dialog {

enum class Speaker { user, system };

struct Utterance {
  Speaker speaker = Speaker::user;
  std::string text;
  int turn_id = 0;
};

// (domain, slot) is the state key; at most one value per key.
using SlotKey = std::pair<std::string, std::string>;

struct SlotAssignment {
  std::string domain;
  std::string slot;
  std::string value;
  SlotKey key() const { return {domain, slot}; }
};

// Sentinels excluded from alignment checks and treated as "unfilled".
inline constexpr const char* kNone = "none";
inline constexpr const char* kDontCare = "dontcare";
bool is_sentinel_value(const std::string& v);

struct DialogState {
  std::map<SlotKey, std::string> values;

  // Missing keys carry "none" by convention.
  const std::string& value_or_none(const std::string& domain, const std::string& slot) const;
  void assign(const SlotAssignment& a) { values[a.key()] = a.value; }
  bool empty() const { return values.empty(); }
  bool operator==(const DialogState&) const = default;
};

struct Dialog {
  std::string dialog_id;
  std::vector<std::string> services;
  std::vector<Utterance> turns;
  // Per-user-turn annotations in turn order: states[i] holds the assignments
  // attached to the i-th user turn (new or changed slots at that turn).
  std::vector<DialogState> states;

  std::size_t user_turn_count() const;
};

struct Ontology {
  std::map<SlotKey, std::vector<std::string>> values;

  bool has_key(const SlotKey& k) const { return values.count(k) > 0; }
  // Throws ValidationError when a value list is empty or lacks the sentinels.
  void validate() const;
};

// Appendix-style post-editing record for one utterance.
struct TranslationRecord {
  std::string dialog_id;
  int turn_id = 0;
  std::vector<std::string> services;
  std::string utterance;
  std::map<std::string, std::string> slot_values;  // "domain-slot" -> value
  std::string trans_utterance;
  std::map<std::string, std::string> trans_slot_values;
  std::string fix_trans_utterance;
  std::map<std::string, std::string> fix_trans_slot_values;
  int changed_utterance = 0;
  int changed_slot_values = 0;

  bool operator==(const TranslationRecord&) const = default;
};

struct QcJudgment {
  std::string dialog_id;
  int turn_id = 0;
  int utterance_acceptable = 0;
  int slot_values_match = 0;
  std::string note;
};

enum class CorpusFormat { multiwoz_v21, multi2woz };

// Parses a corpus document. multi2woz is the canonical schema shipped in
// docs/corpus-schema.json; multiwoz_v21 is the upstream MultiWOZ 2.1
// data.json layout (log entries with belief-state metadata on system turns).
// Malformed bytes throw ParseError with the byte offset; invariant
// violations throw ValidationError naming the dialog and rule.
std::vector<Dialog> parse_dialog_corpus(std::istream& input, CorpusFormat format);
std::vector<Dialog> parse_dialog_corpus_file(const std::string& path, CorpusFormat format);

// Canonical serialization (multi2woz schema, keys ordered, states as flat
// "domain-slot" maps). parse(serialize(dialogs)) == dialogs.
std::string serialize_dialog_corpus(const std::vector<Dialog>& dialogs);

// Checks all Dialog invariants; throws ValidationError on the first failure.
void validate_dialog(const Dialog& d);

// Cumulative per-user-turn states: element t is the union of annotations up
// to user turn t, later assignments overwriting earlier ones per key.
std::vector<DialogState> cumulative_states(const Dialog& d);

struct SlotAlignment {
  std::string slot;
  std::string value;
  bool aligned = false;   // value found in fix_trans_utterance after normalization
  bool skipped = false;   // sentinel value, excluded from the check
};

struct ValidationReport {
  std::string dialog_id;
  int turn_id = 0;
  std::vector<SlotAlignment> alignments;
  bool utterance_flag_consistent = true;    // changed_utterance matches the diff
  bool slot_values_flag_consistent = true;  // changed_slot_values matches the diff
  bool all_aligned() const;
};

// Pure report: alignment of every fixed slot value against the fixed
// utterance (substring match after NFKC-subset normalization + case fold),
// plus changed-flag consistency (byte comparison after normalization).
ValidationReport validate_translation_record(const TranslationRecord& rec);

// Appendix A wire format: array of objects with the exact field names
// dialogID, turnID, services, utterance, slotValues, transUtterance,
// transSlotValues, fixTransUtterance, fixTransSlotValues, changedUtterance,
// changedSlotValues.
std::vector<TranslationRecord> parse_translation_records(std::istream& input);
std::string serialize_translation_records(const std::vector<TranslationRecord>& recs);

// Appendix B wire format: array of objects with dialogID, turnID,
// UtteranceAcceptable, SlotValuesMatchAcceptable, NOTE.
std::vector<QcJudgment> parse_qc_judgments(std::istream& input);
std::string serialize_qc_judgments(const std::vector<QcJudgment>& js);

// Ontology file: map "domain-slot" -> [values...].
Ontology parse_ontology(std::istream& input);
std::string serialize_ontology(const Ontology& ont);

// Splits "domain-slot" at the first '-'; throws ParseError when absent.
SlotKey split_slot_name(const std::string& name);

}  // namespace xtod::dialog
