// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "m3p/corpus.hpp"

namespace m3p {

// Whitespace word-level tokenizer. Ids 0..4 are reserved for the special
// symbols; words follow contiguously in insertion order.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kMask = 3;
  static constexpr int kImg = 4;
  static constexpr int kNumSpecial = 5;

  Tokenizer(const std::vector<std::string>& words, const std::vector<std::string>& languages);

  // Collects every word and language code seen in the corpora and lexicon.
  // English is always language id 0.
  static Tokenizer from_corpora(const std::vector<MonolingualDocument>& docs,
                                const std::vector<CaptionedImage>& images,
                                const BilingualLexicon* lexicon);

  int vocab_size() const { return static_cast<int>(pieces_.size()); }
  int n_languages() const { return static_cast<int>(languages_.size()); }

  int token_id(const std::string& word) const;  // kUnk when unknown
  const std::string& piece(int id) const { return pieces_.at(id); }
  bool is_special(int id) const { return id < kNumSpecial; }

  int language_id(const std::string& code) const;  // throws DataError if unknown
  const std::vector<std::string>& languages() const { return languages_; }
  const std::vector<std::string>& pieces() const { return pieces_; }

  bool operator==(const Tokenizer& other) const {
    return pieces_ == other.pieces_ && languages_ == other.languages_;
  }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> languages_;
  std::unordered_map<std::string, int> language_ids_;
};

}  // namespace m3p
