// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "m3p/streams.hpp"

namespace m3p {

// Text streams right-padded to a common length. attention == 0 marks padding.
struct TextBatch {
  std::vector<std::vector<int>> token_ids;
  std::vector<std::vector<int>> language_ids;
  std::vector<std::vector<std::uint8_t>> attention;

  std::size_t size() const { return token_ids.size(); }
};

TextBatch pad_text_batch(const std::vector<TextStream>& streams);

enum class MaskAction : std::uint8_t { kNone, kMask, kRandom, kKeep };

struct MlmMaskedBatch {
  static constexpr int kIgnore = -100;

  std::vector<std::vector<int>> input_ids;
  std::vector<std::vector<int>> language_ids;
  std::vector<std::vector<std::uint8_t>> attention_mask;
  std::vector<std::vector<int>> labels;  // kIgnore where not selected
  std::vector<std::vector<MaskAction>> actions;
  // One region set per item for caption + image streams; empty for text only.
  std::vector<RegionSet> regions;

  std::size_t size() const { return input_ids.size(); }
  std::size_t masked_count() const;
};

// Selects each eligible token (not CLS, IMG or padding) with probability
// `rate`; a selected token becomes [MASK] (80%), a uniformly random
// non-special id (10%) or stays unchanged (10%).
MlmMaskedBatch apply_mlm_masking(const TextBatch& batch, const Tokenizer& tok, double rate, Rng& rng);

struct MrmMaskedBatch {
  TextBatch text;                // caption context, unmasked
  std::vector<RegionSet> regions;  // masked copies of the inputs
  std::vector<std::vector<int>> mask_indices;
  std::vector<Matrix> target_features;  // one row per masked index
  std::vector<std::vector<int>> target_classes;
  std::vector<std::vector<std::uint8_t>> zeroed;  // per masked index

  std::size_t size() const { return regions.size(); }
};

// Selects each region with probability `rate`; a selected feature row is set
// to zero with probability `zero_prob` and kept otherwise. Spatial rows are
// never touched.
MrmMaskedBatch apply_mrm_masking(const std::vector<RegionSet>& regions, double rate, double zero_prob,
                                 Rng& rng);

// Writes the stored targets back into the masked rows.
std::vector<Matrix> restore_regions(const MrmMaskedBatch& batch);

struct VlmPair {
  TextStream text;
  RegionSet regions;
  int label = 1;
  std::size_t text_source = 0;
  std::size_t image_source = 0;
};

struct VlmPairBatch {
  std::vector<VlmPair> pairs;
};

// Each positive emits itself (label 1) followed by `negatives_per_positive`
// corrupted copies (label 0) whose image or text side, chosen uniformly, is
// replaced by another item's. With `image_ids`, replacements must come from
// an item showing a different image.
VlmPairBatch sample_vlm_pairs(const std::vector<MultimodalStream>& positives, int negatives_per_positive,
                              Rng& rng, const std::vector<int>* image_ids = nullptr);

}  // namespace m3p
