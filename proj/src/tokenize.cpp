#include "carryover/tokenize.hpp"

#include <cctype>
#include <sstream>

namespace carryover {

std::string to_lower_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

namespace {

bool is_detachable_punct(char c) {
  switch (c) {
    case '.':
    case ',':
    case '!':
    case '?':
    case ';':
    case ':':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(to_lower_ascii(text));
  std::string word;
  while (in >> word) {
    std::string tail;
    while (!word.empty() && is_detachable_punct(word.back())) {
      tail.insert(tail.begin(), word.back());
      word.pop_back();
    }
    if (!word.empty()) out.push_back(word);
    for (char c : tail) out.emplace_back(1, c);
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace carryover
