// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "gvqa/core.hpp"

namespace gvqa {

// Word-level tokenizer over a closed vocabulary.
//
// Layout: specials, punctuation singles, numeric literals ("0".."100" and the
// two-decimal unit forms "0.00".."1.00"), then the sorted corpus words. The
// numeric literals make timeline endpoints single tokens in both time
// representations.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kVideo = 4;
  static constexpr int kStartPlaceholder = 5;  // literal "<start>" in format strings
  static constexpr int kEndPlaceholder = 6;    // literal "<end>"

  // Builds the vocabulary from raw training texts. Deterministic: adding the
  // same texts in any order yields the same vocabulary.
  static Tokenizer build(const std::vector<std::string>& corpus_texts);

  // Reconstructs a tokenizer from a stored token list.
  static Tokenizer from_tokens(std::vector<std::string> tokens);

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token_text(int id) const { return tokens_.at(static_cast<size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Id lookup; <unk> for out-of-vocabulary.
  int id_of(const std::string& token) const;

 private:
  Tokenizer() = default;
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

}  // namespace gvqa
