#include "carryover/delex.hpp"

#include <algorithm>

namespace carryover {

Turn delexicalize_turn(const Turn& turn) {
  if (turn.intent.empty()) throw DelexError("turn has no intent label");
  if (!turn.tokens.empty() && turn.tokens.front() == turn.intent) {
    // Already delexicalized; keep idempotent instead of double-prepending.
    return turn;
  }

  struct Anchored {
    SlotSpan span;
    size_t slot_index;
  };
  std::vector<Anchored> anchored;
  for (size_t i = 0; i < turn.slots.size(); ++i) {
    if (turn.slot_spans[i]) anchored.push_back({*turn.slot_spans[i], i});
  }
  std::sort(anchored.begin(), anchored.end(),
            [](const Anchored& a, const Anchored& b) { return a.span.start < b.span.start; });
  for (size_t i = 1; i < anchored.size(); ++i) {
    if (anchored[i].span.start < anchored[i - 1].span.end) {
      throw DelexError("overlapping slot spans: " + turn.slots[anchored[i - 1].slot_index].key +
                       " and " + turn.slots[anchored[i].slot_index].key);
    }
  }

  Turn out = turn;
  out.tokens.clear();
  out.tokens.push_back(turn.intent);
  std::vector<std::optional<SlotSpan>> new_spans(turn.slots.size(), std::nullopt);
  size_t next_anchor = 0;
  for (int i = 0; i < static_cast<int>(turn.tokens.size());) {
    if (next_anchor < anchored.size() && anchored[next_anchor].span.start == i) {
      const Anchored& a = anchored[next_anchor];
      int pos = static_cast<int>(out.tokens.size());
      out.tokens.push_back(turn.slots[a.slot_index].key);
      new_spans[a.slot_index] = SlotSpan{pos, pos + 1};
      i = a.span.end;
      ++next_anchor;
    } else {
      out.tokens.push_back(turn.tokens[i]);
      ++i;
    }
  }
  for (Slot& slot : out.slots) slot.value = slot.key;
  out.slot_spans = std::move(new_spans);
  return out;
}

CandidateExample delexicalize_example(const CandidateExample& example) {
  CandidateExample out = example;
  out.current_turn = delexicalize_turn(example.current_turn);
  for (size_t i = 0; i < example.context.size(); ++i) {
    out.context[i] = delexicalize_turn(example.context[i]);
  }
  out.slot.value = out.slot.key;
  return out;
}

std::vector<CandidateExample> delexicalize_dataset(
    const std::vector<CandidateExample>& dataset, std::vector<std::string>* skipped) {
  std::vector<CandidateExample> out;
  out.reserve(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    try {
      out.push_back(delexicalize_example(dataset[i]));
    } catch (const DelexError& e) {
      if (skipped) {
        skipped->push_back("example " + std::to_string(i) + ": " + e.what());
      }
    }
  }
  return out;
}

std::vector<CandidateExample> augment_with_delex(const std::vector<CandidateExample>& dataset,
                                                 std::vector<std::string>* skipped) {
  std::vector<CandidateExample> out = dataset;
  std::vector<CandidateExample> twins = delexicalize_dataset(dataset, skipped);
  out.insert(out.end(), std::make_move_iterator(twins.begin()),
             std::make_move_iterator(twins.end()));
  return out;
}

}  // namespace carryover
