#include "xtod/dialog.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xtod/textnorm.hpp"

namespace xtod::dialog {

using ordered_json = nlohmann::ordered_json;

bool is_sentinel_value(const std::string& v) {
  const std::string n = textnorm::normalize_for_compare(v);
  return n == kNone || n == kDontCare || n == "not mentioned" || n.empty();
}

const std::string& DialogState::value_or_none(const std::string& domain,
                                              const std::string& slot) const {
  static const std::string none = kNone;
  const auto it = values.find({domain, slot});
  return it == values.end() ? none : it->second;
}

std::size_t Dialog::user_turn_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) {
    if (t.speaker == Speaker::user) ++n;
  }
  return n;
}

void Ontology::validate() const {
  for (const auto& [key, list] : values) {
    const std::string name = key.first + "-" + key.second;
    if (list.empty()) {
      throw ValidationError("ontology value list empty for " + name, name, "values_non_empty");
    }
    const bool has_none = std::find(list.begin(), list.end(), kNone) != list.end();
    const bool has_dontcare = std::find(list.begin(), list.end(), kDontCare) != list.end();
    if (!has_none || !has_dontcare) {
      throw ValidationError("ontology for " + name + " lacks reserved none/dontcare values",
                            name, "reserved_values_present");
    }
  }
}

SlotKey split_slot_name(const std::string& name) {
  const auto dash = name.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 >= name.size()) {
    throw ParseError("slot name not of the form domain-slot: '" + name + "'");
  }
  return {name.substr(0, dash), name.substr(dash + 1)};
}

void validate_dialog(const Dialog& d) {
  if (d.dialog_id.empty()) {
    throw ValidationError("dialog with empty dialog_id", d.dialog_id, "dialog_id_non_empty");
  }
  std::set<std::string> services(d.services.begin(), d.services.end());
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const Utterance& u = d.turns[i];
    if (u.turn_id != static_cast<int>(i)) {
      throw ValidationError("dialog " + d.dialog_id + ": turn_id " + std::to_string(u.turn_id) +
                                " not consecutive from 0",
                            d.dialog_id, "turn_ids_consecutive");
    }
    if (textnorm::trim(u.text).empty()) {
      throw ValidationError("dialog " + d.dialog_id + ": empty text at turn " +
                                std::to_string(u.turn_id),
                            d.dialog_id, "text_non_empty");
    }
    const Speaker expected = (i % 2 == 0) ? Speaker::user : Speaker::system;
    if (u.speaker != expected) {
      throw ValidationError("dialog " + d.dialog_id + ": speakers do not alternate at turn " +
                                std::to_string(u.turn_id),
                            d.dialog_id, "speakers_alternate");
    }
  }
  if (d.states.size() != d.user_turn_count()) {
    throw ValidationError("dialog " + d.dialog_id + ": " + std::to_string(d.states.size()) +
                              " states for " + std::to_string(d.user_turn_count()) + " user turns",
                          d.dialog_id, "states_align_user_turns");
  }
  for (const auto& st : d.states) {
    for (const auto& [key, value] : st.values) {
      if (services.find(key.first) == services.end()) {
        throw ValidationError("dialog " + d.dialog_id + ": state domain '" + key.first +
                                  "' not among services",
                              d.dialog_id, "state_domain_in_services");
      }
      if (value.empty()) {
        throw ValidationError("dialog " + d.dialog_id + ": empty value for " + key.first + "-" +
                                  key.second,
                              d.dialog_id, "value_non_empty");
      }
    }
  }
}

std::vector<DialogState> cumulative_states(const Dialog& d) {
  std::vector<DialogState> out;
  out.reserve(d.states.size());
  DialogState acc;
  for (const auto& st : d.states) {
    for (const auto& [key, value] : st.values) acc.values[key] = value;
    out.push_back(acc);
  }
  return out;
}

namespace {

DialogState state_from_flat_json(const ordered_json& obj, const std::string& dialog_id) {
  DialogState st;
  for (const auto& [name, value] : obj.items()) {
    if (!value.is_string()) {
      throw ValidationError("dialog " + dialog_id + ": state value for '" + name +
                                "' is not a string",
                            dialog_id, "state_value_string");
    }
    try {
      st.values[split_slot_name(name)] = value.get<std::string>();
    } catch (const ParseError& e) {
      throw ValidationError("dialog " + dialog_id + ": " + e.what(), dialog_id, "state_key_form");
    }
  }
  return st;
}

ordered_json state_to_flat_json(const DialogState& st) {
  ordered_json obj = ordered_json::object();
  for (const auto& [key, value] : st.values) obj[key.first + "-" + key.second] = value;
  return obj;
}

std::vector<Dialog> parse_multi2woz(const ordered_json& root) {
  std::vector<Dialog> out;
  if (!root.is_object()) {
    throw ParseError("corpus root is not an object (dialog_id -> dialog map)");
  }
  for (const auto& [dialog_id, body] : root.items()) {
    Dialog d;
    d.dialog_id = dialog_id;
    if (!body.is_object() || !body.contains("turns")) {
      throw ValidationError("dialog " + dialog_id + ": missing turns", dialog_id, "turns_present");
    }
    for (const auto& s : body.value("services", ordered_json::array())) {
      d.services.push_back(s.get<std::string>());
    }
    int turn_id = 0;
    for (const auto& turn : body["turns"]) {
      Utterance u;
      u.turn_id = turn_id++;
      const std::string speaker = turn.value("speaker", "");
      if (speaker == "user") {
        u.speaker = Speaker::user;
      } else if (speaker == "system") {
        u.speaker = Speaker::system;
      } else {
        throw ValidationError("dialog " + dialog_id + ": unknown speaker '" + speaker + "'",
                              dialog_id, "speaker_enum");
      }
      u.text = turn.value("text", "");
      if (u.speaker == Speaker::user) {
        d.states.push_back(turn.contains("state") ? state_from_flat_json(turn["state"], dialog_id)
                                                  : DialogState{});
      } else if (turn.contains("state")) {
        throw ValidationError("dialog " + dialog_id + ": state attached to a system turn",
                              dialog_id, "states_on_user_turns");
      }
      d.turns.push_back(std::move(u));
    }
    validate_dialog(d);
    out.push_back(std::move(d));
  }
  return out;
}

// MultiWOZ 2.1 layout: {"<id>": {"goal": {...}, "log": [{"text", "metadata"}]}}.
// Even log entries are user turns; odd entries are system turns whose
// metadata holds the cumulative belief state for the preceding user turn.
std::vector<Dialog> parse_multiwoz_v21(const ordered_json& root) {
  std::vector<Dialog> out;
  if (!root.is_object()) {
    throw ParseError("corpus root is not an object (dialog_id -> dialog map)");
  }
  for (const auto& [dialog_id, body] : root.items()) {
    Dialog d;
    d.dialog_id = dialog_id;
    if (!body.is_object() || !body.contains("log")) {
      throw ValidationError("dialog " + dialog_id + ": missing log", dialog_id, "log_present");
    }
    std::set<std::string> domains;
    const ordered_json& log = body["log"];
    int turn_id = 0;
    for (const auto& entry : log) {
      Utterance u;
      u.turn_id = turn_id;
      u.speaker = (turn_id % 2 == 0) ? Speaker::user : Speaker::system;
      u.text = entry.value("text", "");
      ++turn_id;
      d.turns.push_back(std::move(u));
      if (d.turns.back().speaker != Speaker::system) continue;

      DialogState st;
      const auto meta_it = entry.find("metadata");
      if (meta_it != entry.end() && meta_it->is_object()) {
        for (const auto& [domain, sections] : meta_it->items()) {
          for (const char* section : {"semi", "book"}) {
            if (!sections.contains(section)) continue;
            for (const auto& [slot, value] : sections[section].items()) {
              if (!value.is_string()) continue;  // "booked" lists etc.
              const std::string v = value.get<std::string>();
              if (v.empty() || is_sentinel_value(v)) continue;
              st.values[{domain, slot}] = v;
              domains.insert(domain);
            }
          }
        }
      }
      d.states.push_back(std::move(st));
    }
    // Trailing user turn without a system reply still needs a state slot.
    while (d.states.size() < d.user_turn_count()) d.states.emplace_back();
    if (body.contains("goal") && body["goal"].is_object()) {
      for (const auto& [domain, goal] : body["goal"].items()) {
        if (goal.is_object() && !goal.empty()) domains.insert(domain);
      }
    }
    d.services.assign(domains.begin(), domains.end());
    validate_dialog(d);
    out.push_back(std::move(d));
  }
  return out;
}

ordered_json parse_json_stream(std::istream& input) {
  try {
    return ordered_json::parse(input);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("corpus syntax error: ") + e.what(), e.byte);
  }
}

}  // namespace

std::vector<Dialog> parse_dialog_corpus(std::istream& input, CorpusFormat format) {
  const ordered_json root = parse_json_stream(input);
  return format == CorpusFormat::multi2woz ? parse_multi2woz(root) : parse_multiwoz_v21(root);
}

std::vector<Dialog> parse_dialog_corpus_file(const std::string& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open corpus file " + path);
  return parse_dialog_corpus(in, format);
}

std::string serialize_dialog_corpus(const std::vector<Dialog>& dialogs) {
  ordered_json root = ordered_json::object();
  for (const Dialog& d : dialogs) {
    ordered_json body;
    body["services"] = d.services;
    ordered_json turns = ordered_json::array();
    std::size_t user_idx = 0;
    for (const Utterance& u : d.turns) {
      ordered_json t;
      t["speaker"] = u.speaker == Speaker::user ? "user" : "system";
      t["text"] = u.text;
      if (u.speaker == Speaker::user) {
        const DialogState& st = d.states[user_idx++];
        if (!st.empty()) t["state"] = state_to_flat_json(st);
      }
      turns.push_back(std::move(t));
    }
    body["turns"] = std::move(turns);
    root[d.dialog_id] = std::move(body);
  }
  return root.dump(2) + "\n";
}

bool ValidationReport::all_aligned() const {
  for (const auto& a : alignments) {
    if (!a.skipped && !a.aligned) return false;
  }
  return utterance_flag_consistent && slot_values_flag_consistent;
}

ValidationReport validate_translation_record(const TranslationRecord& rec) {
  ValidationReport report;
  report.dialog_id = rec.dialog_id;
  report.turn_id = rec.turn_id;
  for (const auto& [slot, value] : rec.fix_trans_slot_values) {
    SlotAlignment a;
    a.slot = slot;
    a.value = value;
    if (is_sentinel_value(value)) {
      a.skipped = true;
    } else {
      a.aligned = textnorm::contains_normalized(rec.fix_trans_utterance, value);
    }
    report.alignments.push_back(std::move(a));
  }
  // Flag semantics: 1 iff the fixed text differs from the automatic
  // translation, compared bytewise after compatibility normalization.
  const bool utterance_changed = textnorm::fold_compat(rec.fix_trans_utterance) !=
                                 textnorm::fold_compat(rec.trans_utterance);
  report.utterance_flag_consistent = (rec.changed_utterance == 1) == utterance_changed;

  auto norm_map = [](const std::map<std::string, std::string>& m) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : m) out[k] = textnorm::fold_compat(v);
    return out;
  };
  const bool values_changed = norm_map(rec.fix_trans_slot_values) != norm_map(rec.trans_slot_values);
  report.slot_values_flag_consistent = (rec.changed_slot_values == 1) == values_changed;
  return report;
}

namespace {

std::map<std::string, std::string> string_map_from_json(const ordered_json& obj,
                                                        const std::string& field) {
  std::map<std::string, std::string> out;
  if (obj.is_null()) return out;
  if (!obj.is_object()) throw ParseError("field " + field + " is not an object");
  for (const auto& [k, v] : obj.items()) {
    out[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return out;
}

template <class T>
T require_field(const ordered_json& obj, const char* name, std::size_t index) {
  if (!obj.contains(name)) {
    throw ParseError("record " + std::to_string(index) + " missing field '" + name + "'");
  }
  return obj[name].get<T>();
}

}  // namespace

std::vector<TranslationRecord> parse_translation_records(std::istream& input) {
  const ordered_json root = parse_json_stream(input);
  if (!root.is_array()) throw ParseError("translation record file is not an array");
  std::vector<TranslationRecord> out;
  out.reserve(root.size());
  std::size_t i = 0;
  for (const auto& obj : root) {
    TranslationRecord r;
    r.dialog_id = require_field<std::string>(obj, "dialogID", i);
    r.turn_id = require_field<int>(obj, "turnID", i);
    for (const auto& s : obj.value("services", ordered_json::array())) {
      r.services.push_back(s.get<std::string>());
    }
    r.utterance = require_field<std::string>(obj, "utterance", i);
    r.slot_values = string_map_from_json(obj.value("slotValues", ordered_json::object()),
                                         "slotValues");
    r.trans_utterance = require_field<std::string>(obj, "transUtterance", i);
    r.trans_slot_values =
        string_map_from_json(obj.value("transSlotValues", ordered_json::object()),
                             "transSlotValues");
    r.fix_trans_utterance = require_field<std::string>(obj, "fixTransUtterance", i);
    r.fix_trans_slot_values =
        string_map_from_json(obj.value("fixTransSlotValues", ordered_json::object()),
                             "fixTransSlotValues");
    r.changed_utterance = require_field<int>(obj, "changedUtterance", i);
    r.changed_slot_values = require_field<int>(obj, "changedSlotValues", i);
    out.push_back(std::move(r));
    ++i;
  }
  return out;
}

std::string serialize_translation_records(const std::vector<TranslationRecord>& recs) {
  ordered_json root = ordered_json::array();
  for (const auto& r : recs) {
    ordered_json obj;
    obj["dialogID"] = r.dialog_id;
    obj["turnID"] = r.turn_id;
    obj["services"] = r.services;
    obj["utterance"] = r.utterance;
    obj["slotValues"] = r.slot_values;
    obj["transUtterance"] = r.trans_utterance;
    obj["transSlotValues"] = r.trans_slot_values;
    obj["fixTransUtterance"] = r.fix_trans_utterance;
    obj["fixTransSlotValues"] = r.fix_trans_slot_values;
    obj["changedUtterance"] = r.changed_utterance;
    obj["changedSlotValues"] = r.changed_slot_values;
    root.push_back(std::move(obj));
  }
  return root.dump(2) + "\n";
}

std::vector<QcJudgment> parse_qc_judgments(std::istream& input) {
  const ordered_json root = parse_json_stream(input);
  if (!root.is_array()) throw ParseError("QC judgment file is not an array");
  std::vector<QcJudgment> out;
  out.reserve(root.size());
  std::size_t i = 0;
  for (const auto& obj : root) {
    QcJudgment j;
    j.dialog_id = require_field<std::string>(obj, "dialogID", i);
    j.turn_id = require_field<int>(obj, "turnID", i);
    j.utterance_acceptable = require_field<int>(obj, "UtteranceAcceptable", i);
    j.slot_values_match = require_field<int>(obj, "SlotValuesMatchAcceptable", i);
    j.note = obj.value("NOTE", "");
    out.push_back(std::move(j));
    ++i;
  }
  return out;
}

std::string serialize_qc_judgments(const std::vector<QcJudgment>& js) {
  ordered_json root = ordered_json::array();
  for (const auto& j : js) {
    ordered_json obj;
    obj["dialogID"] = j.dialog_id;
    obj["turnID"] = j.turn_id;
    obj["UtteranceAcceptable"] = j.utterance_acceptable;
    obj["SlotValuesMatchAcceptable"] = j.slot_values_match;
    obj["NOTE"] = j.note;
    root.push_back(std::move(obj));
  }
  return root.dump(2) + "\n";
}

Ontology parse_ontology(std::istream& input) {
  const ordered_json root = parse_json_stream(input);
  if (!root.is_object()) throw ParseError("ontology file is not an object");
  Ontology ont;
  for (const auto& [name, list] : root.items()) {
    auto& values = ont.values[split_slot_name(name)];
    for (const auto& v : list) values.push_back(v.get<std::string>());
  }
  ont.validate();
  return ont;
}

std::string serialize_ontology(const Ontology& ont) {
  ordered_json root = ordered_json::object();
  for (const auto& [key, list] : ont.values) root[key.first + "-" + key.second] = list;
  return root.dump(2) + "\n";
}

}  // namespace xtod::dialog
