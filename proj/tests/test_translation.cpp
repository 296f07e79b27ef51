#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "carryover/generator.hpp"
#include "carryover/tokenize.hpp"
#include "carryover/translation.hpp"
#include "fixtures.hpp"

using namespace carryover;
using carryover::testing::museum_session;

namespace {

// Independent BLEU re-implementation: naive per-order n-gram maps, geometric
// mean, brevity penalty.
double brute_force_bleu(const TokenizedCorpus& hyps, const TokenizedCorpus& refs) {
  long hyp_len = 0, ref_len = 0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    long matched = 0, total = 0;
    for (size_t s = 0; s < hyps.size(); ++s) {
      std::map<std::vector<std::string>, long> hyp_counts, ref_counts;
      for (size_t i = 0; i + n <= hyps[s].size(); ++i) {
        hyp_counts[{hyps[s].begin() + i, hyps[s].begin() + i + n}]++;
      }
      for (size_t i = 0; i + n <= refs[s].size(); ++i) {
        ref_counts[{refs[s].begin() + i, refs[s].begin() + i + n}]++;
      }
      for (const auto& [gram, count] : hyp_counts) {
        total += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched += std::min(count, it->second);
      }
    }
    if (matched == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(matched) / static_cast<double>(total));
  }
  for (size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += static_cast<long>(hyps[s].size());
    ref_len += static_cast<long>(refs[s].size());
  }
  double bp = hyp_len < ref_len
                  ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                  : 1.0;
  return bp * std::exp(log_sum);
}

}  // namespace

TEST_CASE("lexicon translator applies longest match first") {
  LexiconTranslator translator({{"san francisco", "san francisco"},
                                {"san", "heilige"},
                                {"francisco", "franz"},
                                {"museum", "museum"},
                                {"in", "in"},
                                {"a", "ein"},
                                {"find", "finde"}});
  CHECK(translator.translate(tokenize("find a museum in san francisco"), "en_US", "de_DE") ==
        std::vector<std::string>{"finde", "ein", "museum", "in", "san", "francisco"});
}

TEST_CASE("unknown tokens pass through unchanged") {
  LexiconTranslator translator(std::map<std::string, std::string>{{"hello", "hallo"}});
  CHECK(translator.translate({"hello", "zanzibar"}, "en_US", "de_DE") ==
        std::vector<std::string>{"hallo", "zanzibar"});
}

TEST_CASE("inverted lexicon undoes an unambiguous table") {
  LexiconTranslator fwd({{"hello", "hallo"}, {"world", "welt"}});
  LexiconTranslator bwd = fwd.inverted();
  CHECK(bwd.translate({"hallo", "welt"}, "de_DE", "en_US") ==
        std::vector<std::string>{"hello", "world"});
}

TEST_CASE("external command translator round-trips through cat") {
  ExternalCommandTranslator identity("cat");
  CHECK(identity.translate({"find", "a", "pharmacy"}, "en_US", "de_DE") ==
        std::vector<std::string>{"find", "a", "pharmacy"});
  CHECK_FALSE(identity.thread_safe());
}

TEST_CASE("translate_session preserves structure and re-anchors values") {
  DialogueSession session = museum_session();
  LexiconTranslator translator(
      {{"find", "finde"}, {"a", "ein"}, {"museum", "museum"}, {"in", "in"},
       {"san francisco", "san francisco"}, {"found", "gefunden"},
       {"it", "es"}, {"is", "ist"}, {"miles", "kilometer"}, {"away", "entfernt"},
       {"what's", "was ist"}, {"the", "die"}, {"address", "adresse"},
       {"located", "gelegen"}, {"on", "an"}, {"call", "rufe"}, {"them", "sie an"}});
  DialogueSession translated = translate_session(session, translator, "de_DE");
  CHECK(translated.language == "de_DE");
  REQUIRE(translated.turns.size() == session.turns.size());
  for (size_t i = 0; i < session.turns.size(); ++i) {
    CHECK(translated.turns[i].speaker == session.turns[i].speaker);
    CHECK(translated.turns[i].act == session.turns[i].act);
    CHECK(translated.turns[i].intent == session.turns[i].intent);
    REQUIRE(translated.turns[i].slots.size() == session.turns[i].slots.size());
    for (size_t j = 0; j < session.turns[i].slots.size(); ++j) {
      CHECK(translated.turns[i].slots[j].key == session.turns[i].slots[j].key);
    }
  }
  // "10 miles" -> "10 kilometer", present contiguously, so the span survives.
  const Turn& inform = translated.turns[1];
  CHECK(inform.slots[1].value == "10 kilometer");
  REQUIRE(inform.slot_spans[1].has_value());
  SlotSpan span = *inform.slot_spans[1];
  CHECK(std::vector<std::string>(inform.tokens.begin() + span.start,
                                 inform.tokens.begin() + span.end) ==
        std::vector<std::string>{"10", "kilometer"});
  // Gold values are rewritten with the translated values.
  CHECK(translated.gold_carryover[1].count({"City", "san francisco"}) == 1);
}

TEST_CASE("values no longer contiguous after translation lose their span") {
  // In-context "blue note" maps phrase-wise, but the isolated value translates
  // word-by-word into something that does not appear in the utterance.
  LexiconTranslator translator(
      {{"play blue note", "spiele blauton"}, {"blue", "blau"}, {"note", "notiz"},
       {"play", "spiele"}});
  DialogueSession session;
  session.id = "span-drop";
  session.language = "en_US";
  session.turns.push_back(carryover::testing::make_turn(
      Speaker::User, "play", "Music.PlayIntent", "play blue note",
      {{{"Song", "blue note", "Music"}, SlotSpan{1, 3}}}));
  DialogueSession translated = translate_session(session, translator, "de_DE");
  CHECK(translated.turns[0].slots[0].value == "blau notiz");
  CHECK_FALSE(translated.turns[0].slot_spans[0].has_value());
}

TEST_CASE("translate_session rejects a same-language request") {
  CHECK_THROWS_AS(translate_session(museum_session(), LexiconTranslator({}), "en_US"),
                  TranslationError);
}

TEST_CASE("clipped unigram precision matches the classic example") {
  TokenizedCorpus hyp = {tokenize("the the the the the the the")};
  TokenizedCorpus ref = {tokenize("the cat is on the mat")};
  auto [matched, total] = modified_ngram_precision(hyp, ref, 1);
  CHECK(matched == 2);
  CHECK(total == 7);
}

TEST_CASE("identical corpora score exactly 1.0") {
  TokenizedCorpus corpus = {tokenize("find a pharmacy in seattle"),
                            tokenize("play some jazz music now")};
  BleuReport report = corpus_bleu(corpus, corpus);
  CHECK(report.score == 1.0);
  CHECK(report.brevity_penalty == 1.0);
}

TEST_CASE("disjoint corpora score 0") {
  BleuReport report = corpus_bleu({tokenize("aa bb cc dd")}, {tokenize("ee ff gg hh")});
  CHECK(report.score == 0.0);
}

TEST_CASE("corpus_bleu matches the brute-force counter on a toy corpus") {
  TokenizedCorpus hyp = {tokenize("the cat sat on the mat today"),
                         tokenize("there is a small house on the hill")};
  TokenizedCorpus ref = {tokenize("the cat is on the mat"),
                         tokenize("a small house sits on the hill")};
  BleuReport report = corpus_bleu(hyp, ref);
  CHECK(report.score == doctest::Approx(brute_force_bleu(hyp, ref)).epsilon(1e-9));
}

TEST_CASE("adding a correct pair never lowers clipped totals") {
  TokenizedCorpus hyp = {tokenize("the cat sat on the mat")};
  TokenizedCorpus ref = {tokenize("the cat is on the mat")};
  for (int n = 1; n <= 4; ++n) {
    auto [m0, t0] = modified_ngram_precision(hyp, ref, n);
    TokenizedCorpus hyp2 = hyp, ref2 = ref;
    hyp2.push_back(tokenize("play some jazz music"));
    ref2.push_back(tokenize("play some jazz music"));
    auto [m1, t1] = modified_ngram_precision(hyp2, ref2, n);
    CHECK(m1 >= m0);
    CHECK(t1 >= t0);
  }
}

TEST_CASE("brevity penalty engages when the hypothesis is short") {
  BleuReport report =
      corpus_bleu({tokenize("the cat sat")}, {tokenize("the cat sat on the mat")});
  CHECK(report.brevity_penalty < 1.0);
  CHECK(report.brevity_penalty == doctest::Approx(std::exp(1.0 - 6.0 / 3.0)));
}

TEST_CASE("smoothing rescues higher orders with zero matches") {
  TokenizedCorpus hyp = {tokenize("the dog")};
  TokenizedCorpus ref = {tokenize("the cat")};
  CHECK(corpus_bleu(hyp, ref).score == 0.0);
  CHECK(corpus_bleu(hyp, ref, 4, true).score > 0.0);
}

TEST_CASE("mutually inverse translators give back-translation BLEU 1.0") {
  GeneratorConfig config = default_generator_config();
  config.num_sessions = 30;
  auto sessions = synthesize_parallel_corpus(config, 77)["en_US"];
  LexiconTranslator fwd = default_phrase_table();
  LexiconTranslator bwd = fwd.inverted();
  BleuReport report = back_translation_bleu(sessions, fwd, bwd, "de_DE");
  CHECK(report.score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a lossy backward translator scores below 1 with BP penalty") {
  GeneratorConfig config = default_generator_config();
  config.num_sessions = 10;
  auto sessions = synthesize_parallel_corpus(config, 78)["en_US"];

  struct DropEverySecond : Translator {
    std::vector<std::string> translate(const std::vector<std::string>& tokens,
                                       const std::string&,
                                       const std::string&) const override {
      std::vector<std::string> out;
      for (size_t i = 0; i < tokens.size(); i += 2) out.push_back(tokens[i]);
      return out;
    }
  };
  LexiconTranslator fwd = default_phrase_table();
  DropEverySecond bwd;
  BleuReport report = back_translation_bleu(sessions, fwd, bwd, "de_DE");
  CHECK(report.brevity_penalty < 1.0);
  CHECK(report.score < 1.0);
}
