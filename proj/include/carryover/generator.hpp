#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "carryover/corpus.hpp"
#include "carryover/translation.hpp"

namespace carryover {

struct GenerationError : Error {
  using Error::Error;
};

// Utterance pattern per language; "{Key}" placeholders expand to lexicon
// values and become the turn's slots.
struct UtteranceTemplate {
  std::string intent;
  std::string act;
  std::map<std::string, std::string> patterns;  // language tag -> pattern
};

struct FollowupTemplate {
  UtteranceTemplate user;
  std::vector<std::string> carry_keys;
  // Slots the followup introduces itself: (key, reuse session value).
  std::vector<std::pair<std::string, bool>> own_slots;
  bool domain_switch = false;
};

struct DomainTemplates {
  std::string domain;
  std::vector<UtteranceTemplate> openings;
  std::vector<UtteranceTemplate> plain_replies;       // no distractor slots
  std::vector<UtteranceTemplate> distractor_replies;  // extra non-carried slots
  std::vector<FollowupTemplate> followups;
};

struct GeneratorConfig {
  std::vector<std::string> languages = {"en_US", "de_DE"};
  int num_sessions = 2000;
  double extra_turn_rate = 0.2;      // chance of a third user turn
  double distractor_rate = 0.6;      // chance a reply carries distractor slots
  double topic_shift_rate = 0.15;    // followup is a fresh query, empty gold
  double domain_switch_rate = 0.25;  // chance an eligible followup switches domain
  std::string id_prefix = "syn";
  std::vector<DomainTemplates> domains;
  UtteranceTemplate ack;  // slot-free system acknowledgement
  // key -> language -> parallel surface forms
  std::map<std::string, std::map<std::string, std::vector<std::string>>> lexicon;
  SchemaMap schema_map;
};

// The built-in desk-scale template set (Local / Weather / Music) with
// parallel en_US / de_DE lexicons.
GeneratorConfig default_generator_config();

// Deterministic parallel corpus: same ids, schema, and gold structure across
// languages. With distractor_rate == 0 every context slot at a labeled turn
// is gold.
std::map<std::string, std::vector<DialogueSession>> synthesize_parallel_corpus(
    const GeneratorConfig& config, std::uint64_t seed);

// en_US -> de_DE phrase table matching the default template set.
LexiconTranslator default_phrase_table();

struct SyntheticBenchmark {
  // language -> sessions
  std::map<std::string, std::vector<DialogueSession>> train, dev, test;
  SchemaMap schema_map;
};

SyntheticBenchmark make_benchmark(int train_sessions, int dev_sessions, int test_sessions,
                                  std::uint64_t seed,
                                  GeneratorConfig base = default_generator_config());

}  // namespace carryover
