#include "xtod/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include "json.hpp"
#include "xtod/rng.hpp"
#include "xtod/textnorm.hpp"

namespace xtod::metrics {

using ordered_json = nlohmann::ordered_json;

std::string NormalizationRules::canonical(const std::string& value) const {
  std::string n = textnorm::normalize_for_compare(value);
  const auto it = synonyms.find(n);
  return it == synonyms.end() ? n : it->second;
}

namespace {

bool turn_matches(const dialog::DialogState& pred, const dialog::DialogState& gold,
                  const NormalizationRules& norm) {
  std::set<dialog::SlotKey> keys;
  for (const auto& [k, v] : pred.values) keys.insert(k);
  for (const auto& [k, v] : gold.values) keys.insert(k);
  for (const auto& k : keys) {
    const std::string pv = norm.canonical(pred.value_or_none(k.first, k.second));
    const std::string gv = norm.canonical(gold.value_or_none(k.first, k.second));
    if (pv != gv) return false;
  }
  return true;
}

}  // namespace

JgaReport joint_goal_accuracy(const std::vector<DialogPredictions>& predictions,
                              const std::vector<DialogPredictions>& gold,
                              const NormalizationRules& norm) {
  if (predictions.size() != gold.size()) {
    throw ValidationError("prediction and gold dialog counts differ");
  }
  JgaReport report;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const auto& p = predictions[d];
    const auto& g = gold[d];
    if (p.dialog_id != g.dialog_id) {
      throw ValidationError("dialog order mismatch at '" + g.dialog_id + "'", g.dialog_id,
                            "aligned_dialogs");
    }
    if (p.turns.size() != g.turns.size()) {
      throw ValidationError("dialog " + g.dialog_id + ": " + std::to_string(p.turns.size()) +
                                " predicted turns vs " + std::to_string(g.turns.size()) + " gold",
                            g.dialog_id, "aligned_turns");
    }
    std::size_t correct = 0;
    for (std::size_t t = 0; t < g.turns.size(); ++t) {
      if (turn_matches(p.turns[t], g.turns[t], norm)) ++correct;
    }
    report.correct_turns += correct;
    report.total_turns += g.turns.size();
    report.per_dialog[g.dialog_id] = {correct, g.turns.size()};
  }
  report.accuracy = report.total_turns == 0
                        ? 0.0
                        : static_cast<double>(report.correct_turns) /
                              static_cast<double>(report.total_turns);
  return report;
}

std::vector<RrCandidateSet> sample_rr_candidates(const std::vector<std::size_t>& true_response_ids,
                                                 const std::vector<std::string>& response_pool,
                                                 std::size_t n, std::uint64_t seed,
                                                 unsigned threads) {
  if (n < 2) throw ValidationError("candidate sets need n >= 2");
  if (response_pool.size() < n) {
    throw ValidationError("response pool has " + std::to_string(response_pool.size()) +
                          " entries, need at least " + std::to_string(n));
  }
  std::vector<RrCandidateSet> out(true_response_ids.size());
  rng::parallel_for(true_response_ids.size(), threads, [&](std::size_t ci) {
    const std::size_t true_id = true_response_ids[ci];
    if (true_id >= response_pool.size()) {
      throw ValidationError("true response id out of pool range");
    }
    const std::string true_text = textnorm::normalize_for_compare(response_pool[true_id]);
    // Eligible distractors: different pool entry with different text.
    std::vector<std::size_t> eligible;
    eligible.reserve(response_pool.size());
    for (std::size_t i = 0; i < response_pool.size(); ++i) {
      if (i == true_id) continue;
      if (textnorm::normalize_for_compare(response_pool[i]) == true_text) continue;
      eligible.push_back(i);
    }
    if (eligible.size() < n - 1) {
      throw ValidationError("pool too small after removing duplicates of the true response (" +
                            std::to_string(eligible.size()) + " eligible, need " +
                            std::to_string(n - 1) + ")");
    }
    rng::Rng rng(rng::derive(seed, "rr_candidates", ci));
    RrCandidateSet set;
    set.context_id = ci;
    set.candidate_ids.push_back(true_id);
    for (std::size_t k : rng.sample_indices(eligible.size(), n - 1)) {
      set.candidate_ids.push_back(eligible[k]);
    }
    // The true response's slot within the candidate list is itself seeded so
    // that position carries no signal.
    const auto pos = static_cast<std::size_t>(rng.below(n));
    std::swap(set.candidate_ids[0], set.candidate_ids[pos]);
    set.true_position = pos;
    out[ci] = std::move(set);
  });
  return out;
}

RrReport recall_at_k(const std::vector<Ranking>& rankings, std::size_t k) {
  RrReport report;
  report.k = k;
  report.total_contexts = rankings.size();
  for (const auto& r : rankings) {
    const auto hits_true = std::count(r.order.begin(), r.order.end(), r.true_position);
    if (hits_true != 1) {
      throw ValidationError("ranking must contain the true response exactly once, found " +
                            std::to_string(hits_true));
    }
    report.n = r.order.size();
    for (std::size_t rank = 0; rank < std::min(k, r.order.size()); ++rank) {
      if (r.order[rank] == r.true_position) {
        ++report.hits;
        break;
      }
    }
  }
  report.recall = report.total_contexts == 0
                      ? 0.0
                      : static_cast<double>(report.hits) /
                            static_cast<double>(report.total_contexts);
  return report;
}

KappaReport cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw ValidationError("kappa needs two equal-length, non-empty judgment lists");
  }
  KappaReport r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ya = a[i] != 0, yb = b[i] != 0;
    if (ya && yb) ++r.n11;
    else if (ya && !yb) ++r.n10;
    else if (!ya && yb) ++r.n01;
    else ++r.n00;
  }
  const auto n = static_cast<double>(a.size());
  r.p_o = (static_cast<double>(r.n11) + static_cast<double>(r.n00)) / n;
  const double pa = (static_cast<double>(r.n11) + static_cast<double>(r.n10)) / n;
  const double pb = (static_cast<double>(r.n11) + static_cast<double>(r.n01)) / n;
  r.p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
  if (r.p_e >= 1.0) {
    // Both annotators constant and equal: perfect trivial agreement is
    // kappa 1 by convention; anything else has no defined chance correction.
    if (r.p_o >= 1.0) {
      r.kappa = 1.0;
    } else {
      r.kappa = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.kappa = (r.p_o - r.p_e) / (1.0 - r.p_e);
  return r;
}

QcKappaReport qc_kappa(const std::vector<dialog::QcJudgment>& a,
                       const std::vector<dialog::QcJudgment>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw ValidationError("QC kappa needs two equal-length, non-empty judgment lists");
  }
  std::vector<int> ua, ub, sa, sb, ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].dialog_id != b[i].dialog_id || a[i].turn_id != b[i].turn_id) {
      throw ValidationError("QC judgment lists are not aligned at item " + std::to_string(i));
    }
    ua.push_back(a[i].utterance_acceptable);
    ub.push_back(b[i].utterance_acceptable);
    sa.push_back(a[i].slot_values_match);
    sb.push_back(b[i].slot_values_match);
    ca.push_back(a[i].utterance_acceptable & a[i].slot_values_match);
    cb.push_back(b[i].utterance_acceptable & b[i].slot_values_match);
  }
  return {cohen_kappa(ua, ub), cohen_kappa(sa, sb), cohen_kappa(ca, cb)};
}

std::map<std::string, std::vector<std::string>> qc_sample(
    const std::map<std::string, std::vector<std::string>>& splits_to_ids, double fraction,
    std::size_t per_split_quota, std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [split, ids] : splits_to_ids) {
    std::size_t quota = per_split_quota;
    if (quota == 0) {
      quota = static_cast<std::size_t>(
          std::floor(fraction * static_cast<double>(ids.size()) + 0.5));
    }
    if (quota > ids.size()) {
      throw ValidationError("QC quota " + std::to_string(quota) + " exceeds split '" + split +
                            "' size " + std::to_string(ids.size()));
    }
    rng::Rng rng(rng::derive(seed, "qc_sample", split, 0));
    std::vector<std::string> sampled;
    sampled.reserve(quota);
    for (std::size_t idx : rng.sample_indices(ids.size(), quota)) sampled.push_back(ids[idx]);
    out[split] = std::move(sampled);
  }
  return out;
}

std::string to_json(const JgaReport& r) {
  ordered_json j;
  j["metric"] = "joint_goal_accuracy";
  j["correct_turns"] = r.correct_turns;
  j["total_turns"] = r.total_turns;
  j["accuracy"] = r.accuracy;
  ordered_json per = ordered_json::object();
  for (const auto& [id, counts] : r.per_dialog) {
    per[id] = {{"correct", counts.first}, {"total", counts.second}};
  }
  j["per_dialog"] = std::move(per);
  return j.dump(2) + "\n";
}

std::string to_json(const RrReport& r) {
  ordered_json j;
  j["metric"] = "recall_at_k";
  j["n"] = r.n;
  j["k"] = r.k;
  j["hits"] = r.hits;
  j["total_contexts"] = r.total_contexts;
  j["recall"] = r.recall;
  j["sampling_seed"] = r.sampling_seed;
  return j.dump(2) + "\n";
}

std::string to_json(const KappaReport& r) {
  ordered_json j;
  j["metric"] = "cohen_kappa";
  j["n11"] = r.n11;
  j["n10"] = r.n10;
  j["n01"] = r.n01;
  j["n00"] = r.n00;
  j["p_o"] = r.p_o;
  j["p_e"] = r.p_e;
  j["kappa"] = r.kappa;
  j["degenerate"] = r.degenerate;
  return j.dump(2) + "\n";
}

namespace {

ordered_json parse_report(std::istream& in, const char* metric) {
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what(), e.byte);
  }
  if (j.value("metric", "") != metric) {
    throw ParseError(std::string("report is not a ") + metric + " report");
  }
  return j;
}

}  // namespace

JgaReport jga_from_json(std::istream& in) {
  const ordered_json j = parse_report(in, "joint_goal_accuracy");
  JgaReport r;
  r.correct_turns = j.at("correct_turns").get<std::size_t>();
  r.total_turns = j.at("total_turns").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  const ordered_json per = j.value("per_dialog", ordered_json::object());
  for (const auto& [id, counts] : per.items()) {
    r.per_dialog[id] = {counts.at("correct").get<std::size_t>(),
                        counts.at("total").get<std::size_t>()};
  }
  return r;
}

RrReport rr_from_json(std::istream& in) {
  const ordered_json j = parse_report(in, "recall_at_k");
  RrReport r;
  r.n = j.at("n").get<std::size_t>();
  r.k = j.at("k").get<std::size_t>();
  r.hits = j.at("hits").get<std::size_t>();
  r.total_contexts = j.at("total_contexts").get<std::size_t>();
  r.recall = j.at("recall").get<double>();
  r.sampling_seed = j.value("sampling_seed", std::uint64_t{0});
  return r;
}

KappaReport kappa_from_json(std::istream& in) {
  const ordered_json j = parse_report(in, "cohen_kappa");
  KappaReport r;
  r.n11 = j.at("n11").get<std::size_t>();
  r.n10 = j.at("n10").get<std::size_t>();
  r.n01 = j.at("n01").get<std::size_t>();
  r.n00 = j.at("n00").get<std::size_t>();
  r.p_o = j.at("p_o").get<double>();
  r.p_e = j.at("p_e").get<double>();
  r.kappa = j.at("kappa").get<double>();
  r.degenerate = j.value("degenerate", false);
  return r;
}

std::vector<DialogPredictions> read_dst_predictions(std::istream& in) {
  ordered_json root;
  try {
    root = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("prediction file: ") + e.what(), e.byte);
  }
  if (!root.is_object()) throw ParseError("prediction file must map dialog_id -> turn list");
  std::vector<DialogPredictions> out;
  for (const auto& [dialog_id, turns] : root.items()) {
    DialogPredictions dp;
    dp.dialog_id = dialog_id;
    for (const auto& turn : turns) {
      dialog::DialogState st;
      for (const auto& [name, value] : turn.items()) {
        st.values[dialog::split_slot_name(name)] = value.get<std::string>();
      }
      dp.turns.push_back(std::move(st));
    }
    out.push_back(std::move(dp));
  }
  return out;
}

void write_dst_predictions(std::ostream& out, const std::vector<DialogPredictions>& preds) {
  ordered_json root = ordered_json::object();
  for (const auto& dp : preds) {
    ordered_json turns = ordered_json::array();
    for (const auto& st : dp.turns) {
      ordered_json turn = ordered_json::object();
      for (const auto& [key, value] : st.values) turn[key.first + "-" + key.second] = value;
      turns.push_back(std::move(turn));
    }
    root[dp.dialog_id] = std::move(turns);
  }
  out << root.dump(2) << "\n";
}

}  // namespace xtod::metrics
