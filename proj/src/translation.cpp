#include "carryover/translation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "carryover/tokenize.hpp"

namespace carryover {

LexiconTranslator::LexiconTranslator(std::map<std::string, std::string> phrases)
    : phrases_(std::move(phrases)) {
  for (const auto& [src, tgt] : phrases_) {
    size_t len = static_cast<size_t>(std::count(src.begin(), src.end(), ' ')) + 1;
    max_phrase_len_ = std::max(max_phrase_len_, len);
  }
}

LexiconTranslator LexiconTranslator::from_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open phrase table: " + path);
  std::map<std::string, std::string> phrases;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(line_number) + ": expected TAB separator");
    }
    phrases[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return LexiconTranslator(std::move(phrases));
}

void LexiconTranslator::write_tsv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& [src, tgt] : phrases_) out << src << '\t' << tgt << '\n';
}

std::vector<std::string> LexiconTranslator::translate(const std::vector<std::string>& tokens,
                                                      const std::string&,
                                                      const std::string&) const {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < tokens.size()) {
    size_t longest = std::min(max_phrase_len_, tokens.size() - i);
    bool matched = false;
    for (size_t len = longest; len >= 1 && !matched; --len) {
      std::string phrase = tokens[i];
      for (size_t j = 1; j < len; ++j) phrase += ' ' + tokens[i + j];
      auto it = phrases_.find(phrase);
      if (it != phrases_.end()) {
        std::istringstream target(it->second);
        std::string tok;
        while (target >> tok) out.push_back(tok);
        i += len;
        matched = true;
      }
    }
    if (!matched) {
      out.push_back(tokens[i]);
      ++i;
    }
  }
  return out;
}

LexiconTranslator LexiconTranslator::inverted() const {
  std::map<std::string, std::string> inv;
  for (const auto& [src, tgt] : phrases_) {
    if (!inv.count(tgt)) inv[tgt] = src;
  }
  return LexiconTranslator(std::move(inv));
}

ExternalCommandTranslator::ExternalCommandTranslator(std::string command)
    : command_(std::move(command)) {}

std::vector<std::string> ExternalCommandTranslator::translate(
    const std::vector<std::string>& tokens, const std::string&, const std::string&) const {
  std::string sentence = join_tokens(tokens);
  std::string cmd = "printf '%s\\n' \"$(cat <<'CARRYOVER_EOF'\n" + sentence +
                    "\nCARRYOVER_EOF\n)\" | " + command_;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw TranslationError("failed to launch translator command: " + command_);
  std::string output;
  std::array<char, 4096> buf;
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) output.append(buf.data(), n);
  int status = pclose(pipe);
  if (status != 0) {
    throw TranslationError("translator command exited with status " + std::to_string(status));
  }
  while (!output.empty() && (output.back() == '\n' || output.back() == '\r')) output.pop_back();
  std::vector<std::string> out;
  std::istringstream fields(output);
  std::string tok;
  while (fields >> tok) out.push_back(tok);
  return out;
}

namespace {

// Position of `needle` as a contiguous token subsequence, or -1.
int find_subsequence(const std::vector<std::string>& haystack,
                     const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return -1;
  for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool match = true;
    for (size_t j = 0; j < needle.size(); ++j) {
      if (haystack[i + j] != needle[j]) {
        match = false;
        break;
      }
    }
    if (match) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

DialogueSession translate_session(const DialogueSession& session, const Translator& translator,
                                  const std::string& target_language) {
  if (session.language == target_language) {
    throw TranslationError("session '" + session.id + "' is already in " + target_language);
  }
  DialogueSession out = session;
  out.language = target_language;
  // Gold pairs reference slot values; rewrite them alongside the slots.
  std::map<SlotKeyValue, std::string> gold_value_rewrites;
  for (size_t ti = 0; ti < session.turns.size(); ++ti) {
    Turn& turn = out.turns[ti];
    try {
      turn.tokens = translator.translate(turn.tokens, session.language, target_language);
      for (size_t si = 0; si < turn.slots.size(); ++si) {
        Slot& slot = turn.slots[si];
        std::vector<std::string> value_tokens =
            translator.translate(tokenize(slot.value), session.language, target_language);
        std::string new_value = join_tokens(value_tokens);
        gold_value_rewrites[{slot.key, slot.value}] = new_value;
        slot.value = new_value;
        int pos = find_subsequence(turn.tokens, value_tokens);
        if (pos >= 0) {
          turn.slot_spans[si] = SlotSpan{pos, pos + static_cast<int>(value_tokens.size())};
        } else {
          turn.slot_spans[si] = std::nullopt;
        }
      }
    } catch (const Error& e) {
      throw TranslationError("session '" + session.id + "' turn " + std::to_string(ti) + ": " +
                             e.what());
    }
  }
  for (auto& [t, gold] : out.gold_carryover) {
    std::set<SlotKeyValue> rewritten;
    for (const SlotKeyValue& pair : gold) {
      auto it = gold_value_rewrites.find(pair);
      if (it != gold_value_rewrites.end()) {
        rewritten.insert({pair.first, it->second});
      } else {
        std::vector<std::string> value_tokens =
            translator.translate(tokenize(pair.second), session.language, target_language);
        rewritten.insert({pair.first, join_tokens(value_tokens)});
      }
    }
    gold = std::move(rewritten);
  }
  return out;
}

std::vector<DialogueSession> translate_sessions(const std::vector<DialogueSession>& sessions,
                                                const Translator& translator,
                                                const std::string& target_language) {
  std::vector<DialogueSession> out;
  out.reserve(sessions.size());
  for (const DialogueSession& s : sessions) {
    out.push_back(translate_session(s, translator, target_language));
  }
  return out;
}

namespace {

std::unordered_map<std::string, long> ngram_counts(const std::vector<std::string>& tokens,
                                                   int n) {
  std::unordered_map<std::string, long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) key += '\x1f' + tokens[i + j];
    ++counts[key];
  }
  return counts;
}

}  // namespace

std::pair<long, long> modified_ngram_precision(const TokenizedCorpus& hypotheses,
                                               const TokenizedCorpus& references, int n) {
  if (hypotheses.size() != references.size()) {
    throw InputError("modified_ngram_precision: corpus size mismatch");
  }
  if (n < 1) throw InputError("modified_ngram_precision: n must be >= 1");
  long matched = 0, total = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    auto hyp = ngram_counts(hypotheses[i], n);
    auto ref = ngram_counts(references[i], n);
    for (const auto& [gram, count] : hyp) {
      total += count;
      auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
  }
  return {matched, total};
}

BleuReport corpus_bleu(const TokenizedCorpus& hypotheses, const TokenizedCorpus& references,
                       int max_n, bool smooth) {
  if (hypotheses.empty()) throw InputError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw InputError("corpus_bleu: corpus size mismatch");
  }
  BleuReport report;
  for (const auto& h : hypotheses) report.hyp_length += static_cast<long>(h.size());
  for (const auto& r : references) report.ref_length += static_cast<long>(r.size());

  double log_sum = 0.0;
  bool zero_precision = false;
  for (int n = 1; n <= max_n; ++n) {
    auto [matched, total] = modified_ngram_precision(hypotheses, references, n);
    double p;
    if (smooth) {
      p = (static_cast<double>(matched) + 1.0) / (static_cast<double>(total) + 1.0);
    } else {
      p = total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
    }
    if (n <= 4) report.per_n_precision[n - 1] = p;
    if (p <= 0.0) {
      zero_precision = true;
    } else {
      log_sum += std::log(p);
    }
  }
  report.brevity_penalty =
      report.hyp_length < report.ref_length && report.hyp_length > 0
          ? std::exp(1.0 - static_cast<double>(report.ref_length) /
                               static_cast<double>(report.hyp_length))
          : 1.0;
  report.score =
      zero_precision ? 0.0 : report.brevity_penalty * std::exp(log_sum / max_n);
  return report;
}

BleuReport back_translation_bleu(const std::vector<DialogueSession>& sessions,
                                 const Translator& fwd, const Translator& bwd,
                                 const std::string& target_language) {
  TokenizedCorpus hypotheses, references;
  for (const DialogueSession& session : sessions) {
    for (const Turn& turn : session.turns) {
      auto forward = fwd.translate(turn.tokens, session.language, target_language);
      hypotheses.push_back(bwd.translate(forward, target_language, session.language));
      references.push_back(turn.tokens);
    }
  }
  return corpus_bleu(hypotheses, references);
}

}  // namespace carryover
