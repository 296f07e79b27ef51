#pragma once

#include <string>
#include <vector>

#include "carryover/corpus.hpp"
#include "carryover/error.hpp"

namespace carryover {

struct DelexError : Error {
  using Error::Error;
};

// Replaces spanned slot values with their slot-key symbol, prepends the
// intent label, and rewrites every slot value to its key symbol. Rejects a
// turn whose tokens already start with its intent label.
Turn delexicalize_turn(const Turn& turn);

// Delexicalizes the context turns, the current turn, and the candidate slot.
// Label and distance are untouched.
CandidateExample delexicalize_example(const CandidateExample& example);

// Original examples followed by their delexicalized twins. Per-example
// failures are skipped and reported into `skipped` when given.
std::vector<CandidateExample> augment_with_delex(
    const std::vector<CandidateExample>& dataset,
    std::vector<std::string>* skipped = nullptr);

// Delexicalized copies only (used when augmenting a target-language training
// set with delexicalized source-language data).
std::vector<CandidateExample> delexicalize_dataset(
    const std::vector<CandidateExample>& dataset,
    std::vector<std::string>* skipped = nullptr);

}  // namespace carryover
