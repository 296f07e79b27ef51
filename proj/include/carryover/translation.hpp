#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "carryover/corpus.hpp"
#include "carryover/error.hpp"

namespace carryover {

struct TranslationError : Error {
  using Error::Error;
};

class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::vector<std::string> translate(const std::vector<std::string>& tokens,
                                             const std::string& source_language,
                                             const std::string& target_language) const = 0;
  // Whether concurrent translate() calls are allowed.
  virtual bool thread_safe() const { return true; }
};

// Deterministic phrase-table translator, longest-match-first over token
// spans. Tokens with no phrase entry pass through unchanged.
class LexiconTranslator : public Translator {
 public:
  // phrases: source phrase (space-joined tokens) -> target phrase
  explicit LexiconTranslator(std::map<std::string, std::string> phrases);

  static LexiconTranslator from_tsv(const std::string& path);
  void write_tsv(const std::string& path) const;

  std::vector<std::string> translate(const std::vector<std::string>& tokens,
                                     const std::string& source_language,
                                     const std::string& target_language) const override;

  // Inverted phrase table (target -> source); ambiguous inversions keep the
  // lexicographically first source phrase.
  LexiconTranslator inverted() const;

  const std::map<std::string, std::string>& phrases() const { return phrases_; }

 private:
  std::map<std::string, std::string> phrases_;
  size_t max_phrase_len_ = 1;
};

// Shells out to a command that reads one sentence per line on stdin and
// writes one translated sentence per line on stdout, order-preserving.
class ExternalCommandTranslator : public Translator {
 public:
  explicit ExternalCommandTranslator(std::string command);
  std::vector<std::string> translate(const std::vector<std::string>& tokens,
                                     const std::string& source_language,
                                     const std::string& target_language) const override;
  bool thread_safe() const override { return false; }

 private:
  std::string command_;
};

// Translates every turn's tokens and each slot value independently; a value
// found contiguously in the translated utterance is re-anchored, otherwise
// its span is dropped and the independent translation kept.
DialogueSession translate_session(const DialogueSession& session,
                                  const Translator& translator,
                                  const std::string& target_language);

std::vector<DialogueSession> translate_sessions(const std::vector<DialogueSession>& sessions,
                                                const Translator& translator,
                                                const std::string& target_language);

struct BleuReport {
  double score = 0.0;           // in [0, 1]
  double per_n_precision[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  long hyp_length = 0;
  long ref_length = 0;
};

using TokenizedCorpus = std::vector<std::vector<std::string>>;

// Clipped n-gram matches and total hypothesis n-gram count, corpus-wide.
std::pair<long, long> modified_ngram_precision(const TokenizedCorpus& hypotheses,
                                               const TokenizedCorpus& references, int n);

BleuReport corpus_bleu(const TokenizedCorpus& hypotheses, const TokenizedCorpus& references,
                       int max_n = 4, bool smooth = false);

// BLEU of bwd(fwd(utterance)) against the original utterances; user and
// system turns both count.
BleuReport back_translation_bleu(const std::vector<DialogueSession>& sessions,
                                 const Translator& fwd, const Translator& bwd,
                                 const std::string& target_language);

}  // namespace carryover
