// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Corpus ingestion and desk-scale synthetic data: multilingual text,
// captioned "images" made of region features, and cipher languages with an
// exact word-level lexicon.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "m3p/common.hpp"

namespace m3p {

inline constexpr const char* kEnglish = "en";

struct MonolingualDocument {
  std::vector<std::string> text;
  std::string language;

  bool operator==(const MonolingualDocument&) const = default;
};

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const Box&) const = default;
};

struct ImageSize {
  double width = 0, height = 0;
  bool operator==(const ImageSize&) const = default;
};

struct RegionFeature {
  std::vector<double> feature;
  Box box;
  ImageSize image_size;
  int class_id = 0;
  double class_confidence = 1.0;

  bool operator==(const RegionFeature&) const = default;
};

// Throws DataError when a box lies outside its image or is degenerate, or
// when the feature dimension differs from `feature_dim` (skipped if 0).
void validate_region(const RegionFeature& region, std::size_t feature_dim = 0);

struct CaptionedImage {
  std::vector<std::string> caption;
  std::string language = kEnglish;
  std::vector<RegionFeature> regions;
  // Images shared by several captions carry the same id; empty means the
  // record is its own image.
  std::string image_id;

  bool operator==(const CaptionedImage&) const = default;
};

// English word -> per-language translation lists. Every lookup through
// translations() is counted so callers can verify that a code path never
// consults the dictionary.
class BilingualLexicon {
 public:
  using Key = std::pair<std::string, std::string>;  // (english_word, language)

  BilingualLexicon() = default;
  BilingualLexicon(const BilingualLexicon& other);
  BilingualLexicon& operator=(const BilingualLexicon& other);

  void add(const std::string& english_word, const std::string& language,
           const std::string& translation);

  // nullptr when no entry exists.
  const std::vector<std::string>* translations(const std::string& english_word,
                                               const std::string& language) const;

  const std::map<Key, std::vector<std::string>>& entries() const { return entries_; }
  const std::set<std::string>& languages() const { return languages_; }
  bool empty() const { return entries_.empty(); }
  std::size_t lookup_count() const { return lookups_.load(); }
  void reset_lookup_count() { lookups_ = 0; }

 private:
  std::map<Key, std::vector<std::string>> entries_;
  std::set<std::string> languages_;
  mutable std::atomic<std::size_t> lookups_{0};
};

BilingualLexicon load_lexicon(const std::filesystem::path& path);
void save_lexicon(const BilingualLexicon& lexicon, const std::filesystem::path& path);

// Word-for-word translation; words without an entry are kept. The first
// listed translation is used.
std::vector<std::string> translate_words(const std::vector<std::string>& words,
                                         const BilingualLexicon& lexicon,
                                         const std::string& language);

struct SyntheticCorpusSpec {
  int vocab_size = 40;  // base stems; the first n_classes are object nouns
  int n_languages = 2;  // English plus n_languages - 1 ciphers
  int docs_per_language = 200;
  int caption_count = 200;
  int min_regions = 2;
  int max_regions = 3;
  int feature_dim = 16;
  int n_classes = 8;
  double class_feature_noise = 0.1;
  int min_doc_words = 4;
  int max_doc_words = 12;
  std::uint64_t seed = 0;

  void validate() const;
};

// Surface forms of the base stems in every synthetic language.
struct SyntheticVocabulary {
  std::vector<std::string> languages;            // languages[0] == "en"
  std::vector<std::vector<std::string>> words;   // words[language][stem]
  int n_classes = 0;

  const std::string& word(std::size_t language, int stem) const { return words[language][stem]; }
  // English -> every cipher language, one translation per word.
  BilingualLexicon lexicon() const;
};

SyntheticVocabulary make_synthetic_vocabulary(const SyntheticCorpusSpec& spec);

struct SyntheticTextCorpus {
  std::vector<MonolingualDocument> documents;
  SyntheticVocabulary vocabulary;
  BilingualLexicon lexicon;
};

SyntheticTextCorpus generate_synthetic_multilingual_corpus(const SyntheticCorpusSpec& spec);

struct SyntheticImageCorpus {
  std::vector<CaptionedImage> images;
  Matrix prototypes;  // n_classes x feature_dim
  SyntheticVocabulary vocabulary;
};

// English captions only. `stream` selects an independent random stream so
// that disjoint train/test sets can be drawn from one spec.
SyntheticImageCorpus generate_synthetic_multimodal_corpus(const SyntheticCorpusSpec& spec,
                                                          std::uint64_t stream = 0);

// Line-delimited JSON records.
void write_text_corpus(const std::vector<MonolingualDocument>& docs, const std::filesystem::path& path);
std::vector<MonolingualDocument> read_text_corpus(const std::filesystem::path& path);
void write_image_corpus(const std::vector<CaptionedImage>& images, const std::filesystem::path& path);
std::vector<CaptionedImage> read_image_corpus(const std::filesystem::path& path);

std::string join_words(const std::vector<std::string>& words);
std::vector<std::string> split_words(const std::string& text);

}  // namespace m3p
