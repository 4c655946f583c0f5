// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Tiny random batches and a finite-difference gradient checker shared by the
// unit tests and the acceptance suite.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "m3p/objectives.hpp"

namespace m3p::test {

inline ModelConfig toy_config(int vocab = 200, int languages = 2) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.hidden_dim = 16;
  c.feedforward_dim = 32;
  c.vocab_size = vocab;
  c.n_language_ids = languages;
  c.max_text_len = 16;
  c.max_regions = 4;
  c.feature_dim = 6;
  c.n_classes = 8;
  c.dropout = 0.1;
  c.init_std = 0.3;  // larger than the default so every path carries signal
  return c;
}

inline Tokenizer toy_tokenizer(int vocab = 200) {
  std::vector<std::string> words;
  for (int i = Tokenizer::kNumSpecial; i < vocab; ++i) words.push_back("t" + std::to_string(i));
  return Tokenizer(words, {kEnglish, "x1"});
}

inline TextStream random_text(const ModelConfig& c, Rng& rng, int min_len, int max_len) {
  TextStream s;
  const int len = min_len + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_len - min_len + 1)));
  const int lang = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(c.n_language_ids)));
  s.token_ids.push_back(Tokenizer::kCls);
  for (int i = 1; i < len; ++i) {
    s.token_ids.push_back(Tokenizer::kNumSpecial +
                          static_cast<int>(uniform_index(rng, static_cast<std::size_t>(c.vocab_size - Tokenizer::kNumSpecial))));
  }
  s.language_ids.assign(s.token_ids.size(), lang);
  for (int i = 0; i < len; ++i) s.positions.push_back(i);
  return s;
}

inline RegionSet random_regions(const ModelConfig& c, Rng& rng, int min_n, int max_n) {
  const int n = min_n + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_n - min_n + 1)));
  std::normal_distribution<double> normal;
  RegionSet r;
  r.features.resize(n, c.feature_dim);
  r.spatial.resize(n, 5);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c.feature_dim; ++j) r.features(i, j) = normal(rng);
    const double x1 = uniform01(rng) * 0.5, y1 = uniform01(rng) * 0.5;
    const double x2 = x1 + 0.1 + uniform01(rng) * 0.4, y2 = y1 + 0.1 + uniform01(rng) * 0.4;
    r.spatial.row(i) << x1, y1, x2, y2, (x2 - x1) * (y2 - y1);
    r.class_ids.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(c.n_classes))));
  }
  return r;
}

inline std::vector<MultimodalStream> random_multimodal(const ModelConfig& c, Rng& rng, int items) {
  std::vector<MultimodalStream> out;
  for (int i = 0; i < items; ++i) out.push_back({random_text(c, rng, 3, 7), random_regions(c, rng, 1, 3), std::nullopt});
  return out;
}

// Text-only MLM batch with at least one masked position.
inline MlmMaskedBatch toy_xmlm_batch(const ModelConfig& c, const Tokenizer& tok, Rng& rng, int items = 3) {
  std::vector<TextStream> streams;
  for (int i = 0; i < items; ++i) streams.push_back(random_text(c, rng, 3, 8));
  MlmMaskedBatch m;
  do {
    m = apply_mlm_masking(pad_text_batch(streams), tok, 0.4, rng);
  } while (m.masked_count() == 0);
  return m;
}

inline MlmMaskedBatch toy_mc_mlm_batch(const ModelConfig& c, const Tokenizer& tok, Rng& rng, int items = 3) {
  const auto mm = random_multimodal(c, rng, items);
  std::vector<TextStream> texts;
  MlmMaskedBatch m;
  for (const auto& s : mm) texts.push_back(s.text);
  do {
    m = apply_mlm_masking(pad_text_batch(texts), tok, 0.4, rng);
  } while (m.masked_count() == 0);
  for (const auto& s : mm) m.regions.push_back(s.regions);
  return m;
}

inline MrmMaskedBatch toy_mrm_batch(const ModelConfig& c, Rng& rng, int items = 3) {
  const auto mm = random_multimodal(c, rng, items);
  std::vector<TextStream> texts;
  std::vector<RegionSet> regions;
  for (const auto& s : mm) {
    texts.push_back(s.text);
    regions.push_back(s.regions);
  }
  MrmMaskedBatch m;
  std::size_t masked = 0;
  do {
    m = apply_mrm_masking(regions, 0.5, 0.5, rng);
    masked = 0;
    for (const auto& idx : m.mask_indices) masked += idx.size();
  } while (masked == 0);
  m.text = pad_text_batch(texts);
  return m;
}

inline VlmPairBatch toy_vlm_batch(const ModelConfig& c, Rng& rng, int items = 3, int negatives = 1) {
  return sample_vlm_pairs(random_multimodal(c, rng, items), negatives, rng);
}

using LossFn = std::function<double(const EncoderParameters&, EncoderParameters*)>;

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_relative_error = 0.0;
  std::string worst_entry;
};

// Central differences on a random `fraction` of every tensor (at least one
// entry each). Relative error is |a - n| / max(|a|, |n|, floor); the floor sits
// above the roundoff of the difference quotient, so gradients that vanish
// identically (key biases under the softmax) compare as absolute errors.
inline GradCheckResult gradient_check(const EncoderParameters& params, const LossFn& loss, double fraction, Rng& rng,
                                      double step = 1e-5, double tolerance = 1e-4, double floor = 1e-6) {
  EncoderParameters analytic = params.zeros_like();
  loss(params, &analytic);
  EncoderParameters probe = params;
  auto probe_tensors = probe.tensors();
  const auto grad_tensors = analytic.tensors();
  GradCheckResult result;
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    Matrix& m = *probe_tensors[t].second;
    const auto size = static_cast<std::size_t>(m.size());
    const std::size_t samples = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * size)));
    for (std::size_t s = 0; s < samples; ++s) {
      const auto idx = static_cast<Eigen::Index>(uniform_index(rng, size));
      double& w = m.data()[idx];
      const double saved = w;
      w = saved + step;
      const double up = loss(probe, nullptr);
      w = saved - step;
      const double down = loss(probe, nullptr);
      w = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = grad_tensors[t].second->data()[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (rel >= tolerance) ++result.failures;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_entry = probe_tensors[t].first + "[" + std::to_string(idx) + "] analytic=" + std::to_string(a) +
                             " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace m3p::test
