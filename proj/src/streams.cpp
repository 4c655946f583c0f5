// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/streams.hpp"

#include <algorithm>
#include <cmath>

namespace m3p {

LanguageSampler::LanguageSampler(std::vector<std::string> languages, std::vector<double> raw, double smoothing)
    : languages_(std::move(languages)), raw_(std::move(raw)), smoothing_(smoothing) {
  double z = 0;
  smoothed_.resize(raw_.size());
  for (std::size_t i = 0; i < raw_.size(); ++i) {
    smoothed_[i] = std::pow(raw_[i], smoothing_);
    z += smoothed_[i];
  }
  double acc = 0;
  for (auto& v : smoothed_) {
    v /= z;
    acc += v;
    cumulative_.push_back(acc);
  }
}

const std::string& LanguageSampler::sample(Rng& rng) const {
  const double u = uniform01(rng) * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto idx = std::min<std::size_t>(it - cumulative_.begin(), languages_.size() - 1);
  return languages_[idx];
}

LanguageSampler build_language_sampler(const std::vector<std::pair<std::string, double>>& counts,
                                       double smoothing) {
  if (counts.empty()) throw ConfigError("language sampler needs at least one language");
  if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ConfigError("smoothing exponent must lie in (0,1]");
  double total = 0;
  for (const auto& [code, c] : counts) {
    if (!(c > 0) || !std::isfinite(c)) throw ConfigError("language '" + code + "' has non-positive count");
    total += c;
  }
  std::vector<std::string> languages;
  std::vector<double> raw;
  for (const auto& [code, c] : counts) {
    languages.push_back(code);
    raw.push_back(c / total);
  }
  return LanguageSampler(std::move(languages), std::move(raw), smoothing);
}

TextStream encode_text_stream(const MonolingualDocument& doc, const Tokenizer& tok, int max_len) {
  if (doc.text.empty()) throw DataError("document text is empty");
  if (max_len < 1) throw ConfigError("max_len must be positive");
  const int lang = tok.language_id(doc.language);
  TextStream s;
  s.token_ids.push_back(Tokenizer::kCls);
  for (const auto& w : doc.text) {
    if (static_cast<int>(s.token_ids.size()) >= max_len) break;
    s.token_ids.push_back(tok.token_id(w));
  }
  s.language_ids.assign(s.token_ids.size(), lang);
  s.positions.resize(s.token_ids.size());
  for (std::size_t i = 0; i < s.positions.size(); ++i) s.positions[i] = static_cast<int>(i);
  return s;
}

void CodeSwitchPolicy::validate() const {
  if (!(replace_prob >= 0.0 && replace_prob <= 1.0)) throw ConfigError("replace probability must lie in [0,1]");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("mix ratio must lie in [0,1]");
  if (replace_prob > 0.0) {
    if (languages.empty()) throw ConfigError("code-switching needs a non-empty language set");
    if (lexicon == nullptr) throw ConfigError("code-switching needs a lexicon");
  }
}

SwitchedCaption code_switch_caption(const std::vector<std::string>& caption,
                                    const CodeSwitchPolicy& policy, Rng& rng) {
  policy.validate();
  SwitchedCaption out;
  out.words.reserve(caption.size());
  out.languages.reserve(caption.size());
  std::vector<const std::vector<std::string>*> options;
  std::vector<const std::string*> option_languages;
  for (const auto& word : caption) {
    if (uniform01(rng) < policy.replace_prob) {
      options.clear();
      option_languages.clear();
      for (const auto& lang : policy.languages) {
        if (const auto* t = policy.lexicon->translations(word, lang)) {
          options.push_back(t);
          option_languages.push_back(&lang);
        }
      }
      if (!options.empty()) {
        const std::size_t pick = uniform_index(rng, options.size());
        const auto& translations = *options[pick];
        out.words.push_back(translations[uniform_index(rng, translations.size())]);
        out.languages.push_back(*option_languages[pick]);
        continue;
      }
    }
    out.words.push_back(word);
    out.languages.push_back(policy.source_language);
  }
  return out;
}

RegionSet make_region_set(const std::vector<RegionFeature>& regions) {
  if (regions.empty()) throw DataError("an image needs at least one region");
  const auto dim = regions.front().feature.size();
  RegionSet set;
  set.features.resize(static_cast<Eigen::Index>(regions.size()), static_cast<Eigen::Index>(dim));
  set.spatial.resize(static_cast<Eigen::Index>(regions.size()), 5);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto& region = regions[r];
    validate_region(region, dim);
    const auto row = static_cast<Eigen::Index>(r);
    for (std::size_t j = 0; j < dim; ++j) set.features(row, static_cast<Eigen::Index>(j)) = region.feature[j];
    const double w = region.image_size.width;
    const double h = region.image_size.height;
    const Box& b = region.box;
    set.spatial(row, 0) = b.x1 / w;
    set.spatial(row, 1) = b.y1 / h;
    set.spatial(row, 2) = b.x2 / w;
    set.spatial(row, 3) = b.y2 / h;
    set.spatial(row, 4) = ((b.x2 - b.x1) * (b.y2 - b.y1)) / (w * h);
    set.class_ids.push_back(region.class_id);
  }
  return set;
}

TextStream encode_caption(const std::vector<std::string>& caption_words,
                          const std::vector<std::string>& word_languages, const Tokenizer& tok, int max_len,
                          LanguageIdPolicy policy, const std::string& source_language) {
  if (caption_words.empty()) throw DataError("caption is empty");
  if (!word_languages.empty() && word_languages.size() != caption_words.size()) {
    throw DataError("word language list does not match caption length");
  }
  if (max_len < 1) throw ConfigError("max_len must be positive");
  const int source = tok.language_id(source_language);
  const bool per_word = policy == LanguageIdPolicy::kPerWord && !word_languages.empty();
  TextStream text;
  text.token_ids.push_back(Tokenizer::kCls);
  text.language_ids.push_back(source);
  for (std::size_t i = 0; i < caption_words.size(); ++i) {
    if (static_cast<int>(text.token_ids.size()) >= max_len) break;
    text.token_ids.push_back(tok.token_id(caption_words[i]));
    text.language_ids.push_back(per_word ? tok.language_id(word_languages[i]) : source);
  }
  text.positions.resize(text.token_ids.size());
  for (std::size_t i = 0; i < text.positions.size(); ++i) text.positions[i] = static_cast<int>(i);
  return text;
}

MultimodalStream build_multimodal_stream(const std::vector<std::string>& caption_words,
                                         const std::vector<std::string>& word_languages,
                                         const std::vector<RegionFeature>& regions, const Tokenizer& tok,
                                         int max_len, LanguageIdPolicy policy,
                                         const std::string& source_language) {
  MultimodalStream s;
  s.regions = make_region_set(regions);
  s.text = encode_caption(caption_words, word_languages, tok, max_len, policy, source_language);
  return s;
}

}  // namespace m3p
