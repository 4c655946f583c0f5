// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/tokenizer.hpp"

#include <set>

namespace m3p {

Tokenizer::Tokenizer(const std::vector<std::string>& words, const std::vector<std::string>& languages) {
  pieces_ = {"[PAD]", "[UNK]", "[CLS]", "[MASK]", "[IMG]"};
  for (int i = 0; i < kNumSpecial; ++i) ids_[pieces_[i]] = i;
  for (const auto& w : words) {
    if (ids_.emplace(w, static_cast<int>(pieces_.size())).second) pieces_.push_back(w);
  }
  for (const auto& code : languages) {
    if (language_ids_.emplace(code, static_cast<int>(languages_.size())).second) languages_.push_back(code);
  }
  if (languages_.empty()) throw ConfigError("tokenizer needs at least one language");
}

Tokenizer Tokenizer::from_corpora(const std::vector<MonolingualDocument>& docs,
                                  const std::vector<CaptionedImage>& images,
                                  const BilingualLexicon* lexicon) {
  std::vector<std::string> words;
  std::set<std::string> seen_languages{kEnglish};
  std::vector<std::string> languages{kEnglish};
  auto add_language = [&](const std::string& code) {
    if (seen_languages.insert(code).second) languages.push_back(code);
  };
  for (const auto& d : docs) {
    add_language(d.language);
    words.insert(words.end(), d.text.begin(), d.text.end());
  }
  for (const auto& img : images) {
    add_language(img.language);
    words.insert(words.end(), img.caption.begin(), img.caption.end());
  }
  if (lexicon) {
    for (const auto& [key, translations] : lexicon->entries()) {
      words.push_back(key.first);
      add_language(key.second);
      words.insert(words.end(), translations.begin(), translations.end());
    }
  }
  return Tokenizer(words, languages);
}

int Tokenizer::token_id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

int Tokenizer::language_id(const std::string& code) const {
  auto it = language_ids_.find(code);
  if (it == language_ids_.end()) throw DataError("unknown language '" + code + "'");
  return it->second;
}

}  // namespace m3p
