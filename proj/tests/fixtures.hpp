// Shared test fixtures: a hand-built five-turn Local->Calling session with an
// implicit reference at U2 and a schema-switching explicit reference at U3.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "carryover/corpus.hpp"
#include "carryover/tokenize.hpp"

namespace carryover::testing {

inline Turn make_turn(Speaker speaker, const std::string& act, const std::string& intent,
                      const std::string& text,
                      const std::vector<std::pair<Slot, std::optional<SlotSpan>>>& slots = {}) {
  Turn turn;
  turn.speaker = speaker;
  turn.act = act;
  turn.intent = intent;
  turn.tokens = tokenize(text);
  for (const auto& [slot, span] : slots) {
    turn.slots.push_back(slot);
    turn.slot_spans.push_back(span);
  }
  return turn;
}

// The museum conversation: U1 search, V1 inform, U2 implicit address request,
// V2 location reply, U3 domain switch to Calling.
inline DialogueSession museum_session() {
  DialogueSession session;
  session.id = "fixture-museum";
  session.language = "en_US";
  session.turns.push_back(make_turn(
      Speaker::User, "search_place", "Local.SearchPlaceIntent",
      "find a museum in san francisco",
      {{{"PlaceType", "museum", "Local"}, SlotSpan{2, 3}},
       {{"City", "san francisco", "Local"}, SlotSpan{4, 6}}}));
  session.turns.push_back(make_turn(
      Speaker::System, "inform_place", "Local.InformAction",
      "found exploratorium it is 10 miles away",
      {{{"Place", "exploratorium", "Local"}, SlotSpan{1, 2}},
       {{"Distance", "10 miles", "Local"}, SlotSpan{4, 6}}}));
  session.turns.push_back(make_turn(Speaker::User, "request_address",
                                    "Local.QuestionAction", "what's the address"));
  session.turns.push_back(make_turn(
      Speaker::System, "inform_address", "Local.InformAction",
      "located on embarcadero st",
      {{{"Location", "pier 15 , embarcadero st", "Local"}, std::nullopt}}));
  session.turns.push_back(
      make_turn(Speaker::User, "request_call", "Calling.CallIntent", "call them"));
  session.gold_carryover[1] = {{"Place", "exploratorium"}, {"City", "san francisco"}};
  session.gold_carryover[2] = {{"Contact", "exploratorium"}};
  return session;
}

inline SchemaMap local_to_calling_schema() {
  SchemaMap map;
  map.entries[{"Local", "Place"}] = {"Calling", "Contact"};
  return map;
}

}  // namespace carryover::testing
