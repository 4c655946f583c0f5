// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Image-text matching fine-tuning and mean-recall retrieval evaluation.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "m3p/objectives.hpp"

namespace m3p {

struct RetrievalCaption {
  std::vector<std::string> words;
  std::string language = kEnglish;
  std::size_t image = 0;  // index into RetrievalSplit::images

  bool operator==(const RetrievalCaption&) const = default;
};

// Images own one or more captions; every caption points at exactly one image.
struct RetrievalSplit {
  std::vector<std::string> image_ids;
  std::vector<std::vector<RegionFeature>> images;
  std::vector<RetrievalCaption> captions;

  std::size_t image_count() const { return images.size(); }
  std::size_t caption_count() const { return captions.size(); }
  // Throws DataError unless there are >= 2 images, each caption refers to a
  // valid image and every image has at least one region.
  void validate() const;
};

// Groups records by image_id (an empty id makes the record its own image).
// Image and caption order follow first appearance.
RetrievalSplit make_retrieval_split(const std::vector<CaptionedImage>& records);

// Concatenates splits; images from different splits stay distinct.
RetrievalSplit merge_splits(const std::vector<const RetrievalSplit*>& splits);

// Same images, captions replaced by their word-for-word translation into
// `language` and tagged with it.
RetrievalSplit translate_split(const RetrievalSplit& split, const BilingualLexicon& lexicon,
                               const std::string& language);

enum class FineTuneMode { kNormal, kMct };

struct FineTuneConfig {
  double learning_rate = 5e-5;
  int warmup_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  int negatives_per_positive = 3;
  int batch_size = 8;  // positives per step
  int steps = 300;
  FineTuneMode mode = FineTuneMode::kNormal;
  double replace_prob = 0.5;  // beta for code-switched captions
  double mix_ratio = 0.5;     // share of code-switched positives and negatives
  std::vector<std::string> mct_languages;  // empty: every lexicon language
  LanguageIdPolicy language_ids = LanguageIdPolicy::kKeepSource;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FineTuneResult {
  EncoderParameters params;
  std::vector<double> losses;  // training BCE per step
};

// Each positive (caption, its image) is followed by `negatives_per_positive`
// negatives that pair the caption with another image or the image with a
// caption of another image, each with probability 1/2.
VlmPairBatch sample_finetune_batch(const RetrievalSplit& split, const Tokenizer& tokenizer,
                                   const ModelConfig& model, const FineTuneConfig& config,
                                   const BilingualLexicon* lexicon, Rng& rng);

FineTuneResult fine_tune(const EncoderParameters& initial, const ModelConfig& model, const Tokenizer& tokenizer,
                         const RetrievalSplit& train, const FineTuneConfig& config,
                         const BilingualLexicon* lexicon = nullptr);

// Images x captions scores plus each caption's ground-truth image.
struct ScoreMatrix {
  Matrix scores;
  std::vector<std::size_t> caption_image;

  void validate() const;
};

// scores(i, c) = VLM score of (caption c, image i), evaluated in chunks of
// `batch_size` pairs.
ScoreMatrix score_all_pairs(const EncoderParameters& params, const ModelConfig& model, const Tokenizer& tokenizer,
                            const RetrievalSplit& split, std::size_t batch_size = 64);

double score_pair(const EncoderParameters& params, const ModelConfig& model, const Tokenizer& tokenizer,
                  const RetrievalSplit& split, std::size_t image, std::size_t caption);

inline constexpr std::array<int, 3> kRecallCutoffs = {1, 5, 10};

// Percentages. Candidates are ranked by descending score; ties go to the
// lower candidate index. An image query hits at k when any of its captions
// ranks within the top k.
struct MeanRecallReport {
  std::array<double, 3> image_to_text{};
  std::array<double, 3> text_to_image{};
  double mean_recall = 0.0;
};

MeanRecallReport mean_recall(const ScoreMatrix& matrix);

enum class RetrievalSetting { kZeroShot, kFtEn, kFtEach, kFtAll };

std::string to_string(RetrievalSetting setting);
RetrievalSetting parse_setting(const std::string& name);

struct LanguageData {
  RetrievalSplit train;  // may be empty for zero-shot languages
  RetrievalSplit test;
};

struct SettingResult {
  RetrievalSetting setting = RetrievalSetting::kZeroShot;
  std::map<std::string, MeanRecallReport> reports;
  // Training-language sets of the fine-tune runs performed, in order.
  std::vector<std::vector<std::string>> finetune_runs;
};

// Evaluates `languages` (all dataset languages when empty) under one setting.
SettingResult run_setting(const EncoderParameters& params, const ModelConfig& model, const Tokenizer& tokenizer,
                          const std::map<std::string, LanguageData>& datasets, RetrievalSetting setting,
                          const FineTuneConfig& config, const BilingualLexicon* lexicon = nullptr,
                          const std::vector<std::string>& languages = {});

}  // namespace m3p
