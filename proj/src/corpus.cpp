#include "carryover/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "carryover/error.hpp"
#include "json.hpp"

namespace carryover {

namespace {
using nlohmann::json;
}

std::string Turn::domain() const {
  auto dot = intent.find('.');
  if (dot == std::string::npos) return intent;
  return intent.substr(0, dot);
}

int DialogueSession::num_user_turns() const {
  return static_cast<int>((turns.size() + 1) / 2);
}

int DialogueSession::user_turn_index(int t) const { return 2 * t; }

void validate_session(const DialogueSession& session) {
  for (size_t i = 0; i < session.turns.size(); ++i) {
    Speaker expected = (i % 2 == 0) ? Speaker::User : Speaker::System;
    if (session.turns[i].speaker != expected) {
      throw StructureError("session '" + session.id + "': turn " + std::to_string(i) +
                           " breaks user/system alternation");
    }
  }
  for (size_t i = 0; i < session.turns.size(); ++i) {
    const Turn& turn = session.turns[i];
    if (turn.slot_spans.size() != turn.slots.size()) {
      throw StructureError("session '" + session.id + "': turn " + std::to_string(i) +
                           " has mismatched slots/slot_spans");
    }
    for (size_t j = 0; j < turn.slots.size(); ++j) {
      const Slot& slot = turn.slots[j];
      if (slot.key.empty() || slot.value.empty() ||
          slot.key.find_first_of(" \t\n") != std::string::npos) {
        throw StructureError("session '" + session.id + "': malformed slot key/value in turn " +
                             std::to_string(i));
      }
      if (turn.slot_spans[j]) {
        const SlotSpan& span = *turn.slot_spans[j];
        if (span.start < 0 || span.end <= span.start ||
            span.end > static_cast<int>(turn.tokens.size())) {
          throw StructureError("session '" + session.id + "': slot span out of range in turn " +
                               std::to_string(i));
        }
      }
    }
  }
  int user_turns = session.num_user_turns();
  for (const auto& [t, gold] : session.gold_carryover) {
    if (t < 1 || t >= user_turns) {
      throw StructureError("session '" + session.id + "': gold_carryover references user turn " +
                           std::to_string(t));
    }
    // Each gold value must be visible somewhere in the preceding context.
    // Matching on value only: domain switches may rewrite the key.
    int limit = session.user_turn_index(t);
    for (const auto& [key, value] : gold) {
      bool found = false;
      for (int i = 0; i < limit && !found; ++i) {
        for (const Slot& slot : session.turns[i].slots) {
          if (slot.value == value) {
            found = true;
            break;
          }
        }
      }
      if (!found) {
        throw StructureError("session '" + session.id + "': gold slot " + key + "=" + value +
                             " at user turn " + std::to_string(t) +
                             " does not occur in the preceding context");
      }
    }
  }
}

std::vector<CandidateExample> candidate_set(const DialogueSession& session, int t,
                                            int window, const SchemaMap* schema_map) {
  if (t < 0 || t >= session.num_user_turns()) {
    throw InputError("candidate_set: user turn index " + std::to_string(t) +
                     " out of range for session '" + session.id + "'");
  }
  if (window < 1) throw InputError("candidate_set: window must be >= 1");
  validate_session(session);

  const int current_index = session.user_turn_index(t);
  const Turn& current = session.turns[current_index];
  const std::string current_domain = current.domain();

  std::vector<CandidateExample> out;
  std::set<std::tuple<std::string, std::string, int>> seen;
  const int depth = std::min(t, window);
  // Oldest pair first so the final order is by distance ascending after sort.
  std::vector<Turn> context;
  for (int k = depth; k >= 1; --k) {
    int ui = session.user_turn_index(t - k);
    context.push_back(session.turns[ui]);
    if (ui + 1 < current_index) context.push_back(session.turns[ui + 1]);
  }
  for (int k = 1; k <= depth; ++k) {
    int ui = session.user_turn_index(t - k);
    for (int turn_index : {ui, ui + 1}) {
      if (turn_index >= current_index) continue;
      const Turn& source = session.turns[turn_index];
      for (const Slot& slot : source.slots) {
        Slot mapped = slot;
        if (schema_map && current_domain != slot.domain) {
          auto it = schema_map->entries.find({slot.domain, slot.key});
          if (it != schema_map->entries.end()) {
            mapped.domain = it->second.first;
            mapped.key = it->second.second;
          }
        }
        if (!seen.insert({mapped.key, mapped.value, k}).second) continue;
        CandidateExample ex;
        ex.slot = mapped;
        ex.distance = k;
        ex.source_turn_index = turn_index;
        ex.current_turn = current;
        ex.context = context;
        out.push_back(std::move(ex));
      }
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CandidateExample& a, const CandidateExample& b) {
                     if (a.distance != b.distance) return a.distance < b.distance;
                     return a.source_turn_index < b.source_turn_index;
                   });
  return out;
}

std::vector<CandidateExample> label_candidates(std::vector<CandidateExample> candidates,
                                               const std::set<SlotKeyValue>& gold,
                                               std::vector<SlotKeyValue>* unreachable_gold) {
  for (CandidateExample& ex : candidates) {
    ex.label = gold.count({ex.slot.key, ex.slot.value}) > 0;
  }
  if (unreachable_gold) {
    for (const SlotKeyValue& pair : gold) {
      bool reachable = std::any_of(candidates.begin(), candidates.end(),
                                   [&](const CandidateExample& ex) {
                                     return ex.slot.key == pair.first &&
                                            ex.slot.value == pair.second;
                                   });
      if (!reachable) unreachable_gold->push_back(pair);
    }
  }
  return candidates;
}

std::vector<CandidateExample> corpus_examples(const std::vector<DialogueSession>& sessions,
                                              int window, const SchemaMap* schema_map) {
  std::vector<CandidateExample> out;
  for (const DialogueSession& session : sessions) {
    for (int t = 1; t < session.num_user_turns(); ++t) {
      std::set<SlotKeyValue> gold;
      auto it = session.gold_carryover.find(t);
      if (it != session.gold_carryover.end()) gold = it->second;
      auto labeled = label_candidates(candidate_set(session, t, window, schema_map), gold);
      out.insert(out.end(), std::make_move_iterator(labeled.begin()),
                 std::make_move_iterator(labeled.end()));
    }
  }
  return out;
}

std::vector<DialogueSession> subsample(const std::vector<DialogueSession>& sessions,
                                       double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw InputError("subsample: fraction must be in (0, 1]");
  }
  if (sessions.empty() || fraction == 1.0) return sessions;
  const size_t n = sessions.size();
  const size_t k = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n)));
  std::vector<size_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(indices.begin(), indices.end(), rng);
  indices.resize(std::min(k, n));
  std::sort(indices.begin(), indices.end());
  std::vector<DialogueSession> out;
  out.reserve(indices.size());
  for (size_t i : indices) out.push_back(sessions[i]);
  return out;
}

namespace {

json turn_to_json(const Turn& turn) {
  json slots = json::array();
  for (size_t i = 0; i < turn.slots.size(); ++i) {
    json s = {{"key", turn.slots[i].key},
              {"value", turn.slots[i].value},
              {"domain", turn.slots[i].domain}};
    if (turn.slot_spans[i]) {
      s["span"] = {turn.slot_spans[i]->start, turn.slot_spans[i]->end};
    } else {
      s["span"] = nullptr;
    }
    slots.push_back(std::move(s));
  }
  return json{{"speaker", turn.speaker == Speaker::User ? "user" : "system"},
              {"act", turn.act},
              {"intent", turn.intent},
              {"tokens", turn.tokens},
              {"slots", std::move(slots)}};
}

Turn turn_from_json(const json& j) {
  Turn turn;
  const std::string speaker = j.at("speaker").get<std::string>();
  if (speaker == "user") {
    turn.speaker = Speaker::User;
  } else if (speaker == "system") {
    turn.speaker = Speaker::System;
  } else {
    throw ParseError("unknown speaker '" + speaker + "'");
  }
  turn.act = j.at("act").get<std::string>();
  turn.intent = j.at("intent").get<std::string>();
  turn.tokens = j.at("tokens").get<std::vector<std::string>>();
  for (const json& s : j.at("slots")) {
    Slot slot{s.at("key").get<std::string>(), s.at("value").get<std::string>(),
              s.at("domain").get<std::string>()};
    turn.slots.push_back(std::move(slot));
    if (s.contains("span") && !s.at("span").is_null()) {
      turn.slot_spans.push_back(SlotSpan{s.at("span").at(0).get<int>(),
                                         s.at("span").at(1).get<int>()});
    } else {
      turn.slot_spans.push_back(std::nullopt);
    }
  }
  return turn;
}

}  // namespace

std::vector<DialogueSession> read_sessions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open session file: " + path);
  std::vector<DialogueSession> out;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    DialogueSession session;
    try {
      json j = json::parse(line);
      session.id = j.at("id").get<std::string>();
      session.language = j.at("language").get<std::string>();
      for (const json& t : j.at("turns")) session.turns.push_back(turn_from_json(t));
      if (j.contains("gold_carryover")) {
        for (const auto& [ordinal, slots] : j.at("gold_carryover").items()) {
          std::set<SlotKeyValue>& gold = session.gold_carryover[std::stoi(ordinal)];
          for (const json& s : slots) {
            gold.insert({s.at("key").get<std::string>(), s.at("value").get<std::string>()});
          }
        }
      }
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_number) + ": " + e.what());
    }
    try {
      validate_session(session);
    } catch (const Error& e) {
      throw StructureError(path + ":" + std::to_string(line_number) + ": " + e.what());
    }
    out.push_back(std::move(session));
  }
  return out;
}

void write_sessions(const std::vector<DialogueSession>& sessions, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const DialogueSession& session : sessions) {
    json turns = json::array();
    for (const Turn& t : session.turns) turns.push_back(turn_to_json(t));
    json gold = json::object();
    for (const auto& [t, slots] : session.gold_carryover) {
      json arr = json::array();
      for (const auto& [key, value] : slots) arr.push_back({{"key", key}, {"value", value}});
      gold[std::to_string(t)] = std::move(arr);
    }
    json j = {{"id", session.id},
              {"language", session.language},
              {"turns", std::move(turns)},
              {"gold_carryover", std::move(gold)}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

SchemaMap read_schema_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open schema map: " + path);
  SchemaMap map;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string src_domain, src_key, tgt_domain, tgt_key;
    if (!std::getline(fields, src_domain, '\t') || !std::getline(fields, src_key, '\t') ||
        !std::getline(fields, tgt_domain, '\t') || !std::getline(fields, tgt_key)) {
      throw ParseError(path + ":" + std::to_string(line_number) +
                       ": expected 4 tab-separated fields");
    }
    auto key = std::make_pair(src_domain, src_key);
    if (map.entries.count(key)) {
      throw ParseError(path + ":" + std::to_string(line_number) + ": duplicate source pair");
    }
    map.entries[key] = {tgt_domain, tgt_key};
  }
  return map;
}

void write_schema_map(const SchemaMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& [src, tgt] : map.entries) {
    out << src.first << '\t' << src.second << '\t' << tgt.first << '\t' << tgt.second << '\n';
  }
}

CorpusStats corpus_stats(const std::vector<DialogueSession>& sessions) {
  CorpusStats stats;
  stats.num_sessions = static_cast<std::int64_t>(sessions.size());
  if (sessions.empty()) return stats;
  std::int64_t user_turns = 0;
  for (const DialogueSession& s : sessions) user_turns += s.num_user_turns();
  stats.avg_user_turns_per_session =
      static_cast<double>(user_turns) / static_cast<double>(stats.num_sessions);
  return stats;
}

}  // namespace carryover
