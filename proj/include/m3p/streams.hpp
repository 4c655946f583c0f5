// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// The three input streams: multilingual text, English caption + regions, and
// code-switched caption + regions.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "m3p/corpus.hpp"
#include "m3p/tokenizer.hpp"

namespace m3p {

inline constexpr int kDefaultMaxTextLen = 128;

struct TextStream {
  std::vector<int> token_ids;
  std::vector<int> language_ids;
  std::vector<int> positions;

  std::size_t size() const { return token_ids.size(); }
  bool operator==(const TextStream&) const = default;
};

// Region half of a joint stream. Spatial rows are
// (x1/W, y1/H, x2/W, y2/H, box area / image area).
struct RegionSet {
  Matrix features;  // N x d_v
  Matrix spatial;   // N x 5
  std::vector<int> class_ids;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  bool operator==(const RegionSet& o) const {
    return features == o.features && spatial == o.spatial && class_ids == o.class_ids;
  }
};

struct MultimodalStream {
  TextStream text;
  RegionSet regions;
  std::optional<bool> matched;
};

class LanguageSampler {
 public:
  LanguageSampler(std::vector<std::string> languages, std::vector<double> raw, double smoothing);

  const std::vector<std::string>& languages() const { return languages_; }
  const std::vector<double>& raw_proportions() const { return raw_; }
  const std::vector<double>& smoothed() const { return smoothed_; }
  double smoothing_exponent() const { return smoothing_; }

  const std::string& sample(Rng& rng) const;

 private:
  std::vector<std::string> languages_;
  std::vector<double> raw_;
  std::vector<double> smoothed_;
  std::vector<double> cumulative_;
  double smoothing_;
};

// lambda_i = p_i^a / sum_j p_j^a with p the normalized counts.
LanguageSampler build_language_sampler(const std::vector<std::pair<std::string, double>>& counts,
                                       double smoothing = 0.3);

inline const std::string& sample_language(const LanguageSampler& sampler, Rng& rng) {
  return sampler.sample(rng);
}

TextStream encode_text_stream(const MonolingualDocument& doc, const Tokenizer& tok,
                              int max_len = kDefaultMaxTextLen);

struct CodeSwitchPolicy {
  const BilingualLexicon* lexicon = nullptr;
  std::vector<std::string> languages;  // target set C
  double replace_prob = 0.5;           // beta
  double mix_ratio = 0.5;              // share of code-switched items in the mixed stream
  std::string source_language = kEnglish;

  void validate() const;
};

struct SwitchedCaption {
  std::vector<std::string> words;
  std::vector<std::string> languages;  // source language of each emitted word
};

SwitchedCaption code_switch_caption(const std::vector<std::string>& caption,
                                    const CodeSwitchPolicy& policy, Rng& rng);

enum class LanguageIdPolicy {
  kKeepSource,  // every text position uses the caption's original language
  kPerWord,     // each piece takes the language of the word that produced it
};

RegionSet make_region_set(const std::vector<RegionFeature>& regions);

// CLS + caption pieces, truncated to max_len. Language ids follow `policy`;
// CLS always takes the source language.
TextStream encode_caption(const std::vector<std::string>& caption_words,
                          const std::vector<std::string>& word_languages, const Tokenizer& tok,
                          int max_len = kDefaultMaxTextLen,
                          LanguageIdPolicy policy = LanguageIdPolicy::kKeepSource,
                          const std::string& source_language = kEnglish);

MultimodalStream build_multimodal_stream(const std::vector<std::string>& caption_words,
                                         const std::vector<std::string>& word_languages,
                                         const std::vector<RegionFeature>& regions,
                                         const Tokenizer& tok, int max_len = kDefaultMaxTextLen,
                                         LanguageIdPolicy policy = LanguageIdPolicy::kKeepSource,
                                         const std::string& source_language = kEnglish);

// Draws each item from `switched` with probability mix_ratio, otherwise from
// `english`. Sources are single-consumer callables.
template <class Item>
class StreamMixer {
 public:
  StreamMixer(std::function<Item()> english, std::function<Item()> switched, double mix_ratio)
      : english_(std::move(english)), switched_(std::move(switched)), mix_ratio_(mix_ratio) {
    if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("mix ratio must lie in [0,1]");
  }

  Item next(Rng& rng) {
    if (uniform01(rng) < mix_ratio_) {
      ++switched_count_;
      return switched_();
    }
    return english_();
  }

  std::size_t switched_count() const { return switched_count_; }

 private:
  std::function<Item()> english_;
  std::function<Item()> switched_;
  double mix_ratio_;
  std::size_t switched_count_ = 0;
};

template <class Item>
StreamMixer<Item> mix_streams(std::function<Item()> english, std::function<Item()> switched,
                              double mix_ratio) {
  return StreamMixer<Item>(std::move(english), std::move(switched), mix_ratio);
}

}  // namespace m3p
