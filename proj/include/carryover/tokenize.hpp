#pragma once

#include <string>
#include <vector>

namespace carryover {

// Corpus-wide tokenization: lowercase (ASCII), split on whitespace, detach
// trailing punctuation as separate tokens. Fixed so slot spans stay valid.
std::vector<std::string> tokenize(const std::string& text);

std::string to_lower_ascii(const std::string& s);

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace carryover
