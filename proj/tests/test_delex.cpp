#include <doctest.h>

#include "carryover/delex.hpp"
#include "carryover/tokenize.hpp"
#include "fixtures.hpp"

using namespace carryover;
using carryover::testing::make_turn;
using carryover::testing::museum_session;

TEST_CASE("search turn delexicalizes to intent plus slot key symbols") {
  DialogueSession session = museum_session();
  Turn delexed = delexicalize_turn(session.turns[0]);
  CHECK(delexed.tokens == std::vector<std::string>{"Local.SearchPlaceIntent", "find", "a",
                                                   "PlaceType", "in", "City"});
  // Slot stream values become their key symbols.
  for (const Slot& slot : delexed.slots) CHECK(slot.value == slot.key);
}

TEST_CASE("inform turn delexicalizes both spanned values") {
  DialogueSession session = museum_session();
  Turn delexed = delexicalize_turn(session.turns[1]);
  CHECK(delexed.tokens == std::vector<std::string>{"Local.InformAction", "found", "Place",
                                                   "it", "is", "Distance", "away"});
}

TEST_CASE("slot-free turn gets only the intent prepended") {
  Turn turn = make_turn(Speaker::User, "ask", "Local.QuestionAction", "what's the address");
  Turn delexed = delexicalize_turn(turn);
  CHECK(delexed.tokens == std::vector<std::string>{"Local.QuestionAction", "what's", "the",
                                                   "address"});
}

TEST_CASE("unspanned slot values leave tokens alone but rewrite the slot stream") {
  DialogueSession session = museum_session();
  Turn delexed = delexicalize_turn(session.turns[3]);  // Location has no span
  CHECK(delexed.tokens == std::vector<std::string>{"Local.InformAction", "located", "on",
                                                   "embarcadero", "st"});
  CHECK(delexed.slots[0].value == "Location");
}

TEST_CASE("token count identity holds for every delexicalized turn") {
  for (const Turn& turn : museum_session().turns) {
    Turn delexed = delexicalize_turn(turn);
    int span_tokens = 0, spanned_slots = 0;
    for (const auto& span : turn.slot_spans) {
      if (span) {
        span_tokens += span->end - span->start;
        ++spanned_slots;
      }
    }
    CHECK(static_cast<int>(delexed.tokens.size()) ==
          static_cast<int>(turn.tokens.size()) - span_tokens + spanned_slots + 1);
    CHECK(delexed.tokens.front() == turn.intent);
  }
}

TEST_CASE("already-delexicalized turns are returned unchanged") {
  Turn delexed = delexicalize_turn(museum_session().turns[0]);
  CHECK(delexicalize_turn(delexed) == delexed);
}

TEST_CASE("overlapping spans raise an error naming both slots") {
  Turn turn = make_turn(Speaker::User, "a", "Local.X", "one two three",
                        {{{"A", "one two", "Local"}, SlotSpan{0, 2}},
                         {{"B", "two three", "Local"}, SlotSpan{1, 3}}});
  try {
    delexicalize_turn(turn);
    FAIL("expected DelexError");
  } catch (const DelexError& e) {
    std::string message = e.what();
    CHECK(message.find("A") != std::string::npos);
    CHECK(message.find("B") != std::string::npos);
  }
}

TEST_CASE("delexicalize_example rewrites context, current turn, and candidate") {
  DialogueSession session = museum_session();
  auto candidates = candidate_set(session, 1, 2);
  for (const CandidateExample& ex : candidates) {
    CandidateExample delexed = delexicalize_example(ex);
    CHECK(delexed.slot.value == delexed.slot.key);
    CHECK(delexed.distance == ex.distance);
    CHECK(delexed.label == ex.label);
    CHECK(delexed.current_turn.tokens.front() == ex.current_turn.intent);
    for (size_t i = 0; i < delexed.context.size(); ++i) {
      CHECK(delexed.context[i].tokens.front() == ex.context[i].intent);
    }
  }
  // Sibling candidates share one context, so their delexicalized contexts match.
  CandidateExample a = delexicalize_example(candidates[0]);
  CandidateExample b = delexicalize_example(candidates[1]);
  for (size_t i = 0; i < a.context.size(); ++i) {
    CHECK(a.context[i].tokens == b.context[i].tokens);
  }
}

TEST_CASE("augment_with_delex exactly doubles a clean dataset") {
  DialogueSession session = museum_session();
  auto examples = corpus_examples({session}, 2);
  std::vector<std::string> skipped;
  auto augmented = augment_with_delex(examples, &skipped);
  CHECK(skipped.empty());
  CHECK(augmented.size() == 2 * examples.size());
  // Second half equals mapping delexicalize_example over the first half.
  for (size_t i = 0; i < examples.size(); ++i) {
    CandidateExample expected = delexicalize_example(examples[i]);
    CHECK(augmented[examples.size() + i].current_turn == expected.current_turn);
    CHECK(augmented[examples.size() + i].slot == expected.slot);
  }
}

TEST_CASE("augment_with_delex on an empty dataset is empty") {
  CHECK(augment_with_delex({}).empty());
}

TEST_CASE("delexicalized slot streams are language independent") {
  // Parallel turns with different surface words but identical schema.
  Turn en = make_turn(Speaker::User, "search_place", "Local.SearchPlaceIntent",
                      "find a pharmacy in seattle",
                      {{{"PlaceType", "pharmacy", "Local"}, SlotSpan{2, 3}},
                       {{"City", "seattle", "Local"}, SlotSpan{4, 5}}});
  Turn de = make_turn(Speaker::User, "search_place", "Local.SearchPlaceIntent",
                      "finde eine apotheke in seattle",
                      {{{"PlaceType", "apotheke", "Local"}, SlotSpan{2, 3}},
                       {{"City", "seattle", "Local"}, SlotSpan{4, 5}}});
  Turn en_delexed = delexicalize_turn(en);
  Turn de_delexed = delexicalize_turn(de);
  CHECK(en_delexed.slots == de_delexed.slots);
  CHECK(en_delexed.tokens[3] == de_delexed.tokens[3]);  // both "PlaceType"
}
