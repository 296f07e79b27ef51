#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace carryover {

enum class Speaker { User, System };

struct Slot {
  std::string key;
  std::string value;
  std::string domain;

  friend auto operator<=>(const Slot&, const Slot&) = default;
};

// Half-open [start, end) token index range of a slot value in a turn.
struct SlotSpan {
  int start = 0;
  int end = 0;

  friend auto operator<=>(const SlotSpan&, const SlotSpan&) = default;
};

struct Turn {
  Speaker speaker = Speaker::User;
  std::string act;
  std::string intent;
  std::vector<std::string> tokens;
  std::vector<Slot> slots;
  // Parallel to slots; nullopt when the value is not anchored in tokens.
  std::vector<std::optional<SlotSpan>> slot_spans;

  // Domain of the turn, derived from the intent prefix before '.'.
  std::string domain() const;

  friend bool operator==(const Turn&, const Turn&) = default;
};

using SlotKeyValue = std::pair<std::string, std::string>;

struct DialogueSession {
  std::string id;
  std::string language;
  std::vector<Turn> turns;
  // user-turn ordinal (>= 1) -> gold carried-over (key, value) pairs
  std::map<int, std::set<SlotKeyValue>> gold_carryover;

  int num_user_turns() const;
  // Global turn index of the t-th user turn (turns alternate user-first).
  int user_turn_index(int t) const;

  friend bool operator==(const DialogueSession&, const DialogueSession&) = default;
};

struct CandidateExample {
  Slot slot;
  int distance = 0;  // offset of the source turn pair from the current turn
  int source_turn_index = 0;
  Turn current_turn;
  std::vector<Turn> context;  // window, oldest first
  std::optional<bool> label;
};

struct SchemaMap {
  // (source domain, slot key) -> (target domain, slot key)
  std::map<std::pair<std::string, std::string>, std::pair<std::string, std::string>>
      entries;

  bool empty() const { return entries.empty(); }
};

struct CorpusStats {
  std::int64_t num_sessions = 0;
  double avg_user_turns_per_session = 0.0;
};

// Throws StructureError if turns do not strictly alternate user/system
// starting with a user turn, or if gold entries are malformed.
void validate_session(const DialogueSession& session);

// Candidate set of Eq.-style context slots for user turn t (0-based), using
// the previous min(t, window) user/system turn pairs. Slots from both turns
// of pair k get distance k. Duplicate (key, value, distance) collapsed.
// Order: distance ascending, then source position.
std::vector<CandidateExample> candidate_set(const DialogueSession& session, int t,
                                            int window,
                                            const SchemaMap* schema_map = nullptr);

// Labels each candidate true iff its (key, value) is in gold. Gold pairs not
// reachable by any candidate are reported into `unreachable_gold` when given.
std::vector<CandidateExample> label_candidates(
    std::vector<CandidateExample> candidates, const std::set<SlotKeyValue>& gold,
    std::vector<SlotKeyValue>* unreachable_gold = nullptr);

// All labeled candidate examples of a corpus (user turns with context only).
std::vector<CandidateExample> corpus_examples(
    const std::vector<DialogueSession>& sessions, int window,
    const SchemaMap* schema_map = nullptr);

// ceil(fraction * N) sessions, uniform without replacement, deterministic per
// seed and order-preserving. fraction == 1.0 returns the input unchanged.
std::vector<DialogueSession> subsample(const std::vector<DialogueSession>& sessions,
                                       double fraction, std::uint64_t seed);

std::vector<DialogueSession> read_sessions(const std::string& path);
void write_sessions(const std::vector<DialogueSession>& sessions,
                    const std::string& path);

// TSV: source_domain, source_key, target_domain, target_key.
SchemaMap read_schema_map(const std::string& path);
void write_schema_map(const SchemaMap& map, const std::string& path);

CorpusStats corpus_stats(const std::vector<DialogueSession>& sessions);

}  // namespace carryover
