// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/masking.hpp"

#include <algorithm>

namespace m3p {

TextBatch pad_text_batch(const std::vector<TextStream>& streams) {
  std::size_t len = 0;
  for (const auto& s : streams) len = std::max(len, s.size());
  TextBatch b;
  for (const auto& s : streams) {
    auto ids = s.token_ids;
    auto langs = s.language_ids;
    std::vector<std::uint8_t> att(s.size(), 1);
    ids.resize(len, Tokenizer::kPad);
    langs.resize(len, langs.empty() ? 0 : langs.front());
    att.resize(len, 0);
    b.token_ids.push_back(std::move(ids));
    b.language_ids.push_back(std::move(langs));
    b.attention.push_back(std::move(att));
  }
  return b;
}

std::size_t MlmMaskedBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& row : labels) {
    n += static_cast<std::size_t>(std::count_if(row.begin(), row.end(), [](int l) { return l != kIgnore; }));
  }
  return n;
}

MlmMaskedBatch apply_mlm_masking(const TextBatch& batch, const Tokenizer& tok, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("MLM rate must lie in [0,1]");
  const int n_words = tok.vocab_size() - Tokenizer::kNumSpecial;
  MlmMaskedBatch out;
  out.input_ids = batch.token_ids;
  out.language_ids = batch.language_ids;
  out.attention_mask = batch.attention;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ids = batch.token_ids[b];
    std::vector<int> labels(ids.size(), MlmMaskedBatch::kIgnore);
    std::vector<MaskAction> actions(ids.size(), MaskAction::kNone);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const int id = ids[t];
      if (!batch.attention[b][t] || id == Tokenizer::kCls || id == Tokenizer::kImg || id == Tokenizer::kPad) continue;
      if (uniform01(rng) >= rate) continue;
      labels[t] = id;
      const double u = uniform01(rng);
      if (u < 0.8) {
        out.input_ids[b][t] = Tokenizer::kMask;
        actions[t] = MaskAction::kMask;
      } else if (u < 0.9 && n_words > 0) {
        out.input_ids[b][t] = Tokenizer::kNumSpecial + static_cast<int>(uniform_index(rng, n_words));
        actions[t] = MaskAction::kRandom;
      } else {
        actions[t] = MaskAction::kKeep;
      }
    }
    out.labels.push_back(std::move(labels));
    out.actions.push_back(std::move(actions));
  }
  return out;
}

MrmMaskedBatch apply_mrm_masking(const std::vector<RegionSet>& regions, double rate, double zero_prob, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0) || !(zero_prob >= 0.0 && zero_prob <= 1.0)) {
    throw ConfigError("MRM probabilities must lie in [0,1]");
  }
  MrmMaskedBatch out;
  out.regions = regions;
  for (std::size_t b = 0; b < regions.size(); ++b) {
    const auto& src = regions[b];
    auto& masked = out.regions[b];
    std::vector<int> indices;
    std::vector<std::uint8_t> zeroed;
    for (Eigen::Index r = 0; r < src.features.rows(); ++r) {
      if (uniform01(rng) >= rate) continue;
      indices.push_back(static_cast<int>(r));
      const bool zero = uniform01(rng) < zero_prob;
      zeroed.push_back(zero ? 1 : 0);
      if (zero) masked.features.row(r).setZero();
    }
    Matrix targets(static_cast<Eigen::Index>(indices.size()), src.features.cols());
    std::vector<int> classes;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      targets.row(static_cast<Eigen::Index>(k)) = src.features.row(indices[k]);
      classes.push_back(src.class_ids.at(indices[k]));
    }
    out.mask_indices.push_back(std::move(indices));
    out.target_features.push_back(std::move(targets));
    out.target_classes.push_back(std::move(classes));
    out.zeroed.push_back(std::move(zeroed));
  }
  return out;
}

std::vector<Matrix> restore_regions(const MrmMaskedBatch& batch) {
  std::vector<Matrix> out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Matrix m = batch.regions[b].features;
    for (std::size_t k = 0; k < batch.mask_indices[b].size(); ++k) {
      m.row(batch.mask_indices[b][k]) = batch.target_features[b].row(static_cast<Eigen::Index>(k));
    }
    out.push_back(std::move(m));
  }
  return out;
}

VlmPairBatch sample_vlm_pairs(const std::vector<MultimodalStream>& positives, int negatives_per_positive,
                              Rng& rng, const std::vector<int>* image_ids) {
  if (positives.size() < 2) throw DataError("VLM negatives need a batch of at least two items");
  if (negatives_per_positive < 1) throw ConfigError("negatives_per_positive must be >= 1");
  if (image_ids && image_ids->size() != positives.size()) throw ConfigError("image id list size mismatch");

  const std::size_t n = positives.size();
  auto differs = [&](std::size_t a, std::size_t b) {
    return a != b && (!image_ids || (*image_ids)[a] != (*image_ids)[b]);
  };
  VlmPairBatch out;
  out.pairs.reserve(n * static_cast<std::size_t>(1 + negatives_per_positive));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (differs(i, j)) others.push_back(j);
    }
    if (others.empty()) throw DataError("no item with a different image available for negatives");
    out.pairs.push_back({positives[i].text, positives[i].regions, 1, i, i});
    for (int k = 0; k < negatives_per_positive; ++k) {
      const std::size_t j = others[uniform_index(rng, others.size())];
      if (uniform01(rng) < 0.5) {
        out.pairs.push_back({positives[i].text, positives[j].regions, 0, i, j});
      } else {
        out.pairs.push_back({positives[j].text, positives[i].regions, 0, j, i});
      }
    }
  }
  return out;
}

}  // namespace m3p
