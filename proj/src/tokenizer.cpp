// SPDX-License-Identifier: Apache-2.0
#include "gvqa/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>

namespace gvqa {

namespace {

const std::vector<std::string>& specials() {
  static const std::vector<std::string> s = {"<pad>", "<unk>",   "<bos>", "<eos>",
                                             "<video>", "<start>", "<end>"};
  return s;
}

const std::string& punct_singles() {
  static const std::string p = "[],?.!:;";
  return p;
}

bool is_word_char(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '\''; }

// One lexical scan shared by encoding and vocabulary building. Emits raw
// token strings; words come out lowercased, specials verbatim.
std::vector<std::string> scan(const std::string& text) {
  std::vector<std::string> out;
  const auto& sp = specials();
  size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '<') {
      bool matched = false;
      for (const auto& s : sp) {
        if (text.compare(i, s.size(), s) == 0) {
          out.push_back(s);
          i += s.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (punct_singles().find(c) != std::string::npos && c != '.') {
      out.push_back(std::string(1, c));
      ++i;
      continue;
    }
    if (c == '.') {
      out.push_back(".");
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      // A decimal point glues on only when digits follow, so "5." at a
      // sentence end stays a number plus a period.
      if (j < text.size() && text[j] == '.' && j + 1 < text.size() &&
          std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
        ++j;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      }
      out.push_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    if (is_word_char(c)) {
      size_t j = i;
      std::string word;
      while (j < text.size() && is_word_char(text[j])) {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[j])));
        ++j;
      }
      out.push_back(word);
      i = j;
      continue;
    }
    // Unknown symbol: one <unk>-bound token per character.
    out.push_back(std::string(1, c));
    ++i;
  }
  return out;
}

bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

bool is_decimal_literal(const std::string& s) {
  const size_t dot = s.find('.');
  if (dot == std::string::npos) return all_digits(s);
  return dot > 0 && dot + 1 < s.size() && all_digits(s.substr(0, dot)) &&
         all_digits(s.substr(dot + 1));
}

}  // namespace

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus_texts) {
  std::vector<std::string> tokens = specials();
  for (char c : punct_singles()) tokens.push_back(std::string(1, c));
  for (int v = 0; v <= 100; ++v) tokens.push_back(std::to_string(v));
  for (int v = 0; v <= 100; ++v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", v / 100.0);
    tokens.push_back(buf);
  }

  std::set<std::string> seen(tokens.begin(), tokens.end());
  std::set<std::string> words;
  for (const auto& text : corpus_texts) {
    for (const auto& tok : scan(text)) {
      if (seen.count(tok) || is_decimal_literal(tok)) continue;
      words.insert(tok);
    }
  }
  for (const auto& w : words) tokens.push_back(w);
  return from_tokens(std::move(tokens));
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  Tokenizer t;
  t.tokens_ = std::move(tokens);
  for (size_t i = 0; i < t.tokens_.size(); ++i) {
    t.ids_[t.tokens_[i]] = static_cast<int>(i);
  }
  if (t.vocab_size() < kEndPlaceholder + 1 || t.tokens_[0] != "<pad>" ||
      t.tokens_[1] != "<unk>") {
    throw DomainError("Tokenizer: token list is missing the special prefix");
  }
  return t;
}

int Tokenizer::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& tok : scan(text)) out.push_back(id_of(tok));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  static const std::string no_space_before = ",].?!:;";
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    const std::string& tok = tokens_.at(static_cast<size_t>(id));
    const bool suppress = !out.empty() &&
                          ((tok.size() == 1 && no_space_before.find(tok[0]) != std::string::npos) ||
                           out.back() == '[');
    if (!out.empty() && !suppress) out += ' ';
    out += tok;
  }
  return out;
}

}  // namespace gvqa
