// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Shared transformer encoder over the joint [text][IMG][regions] sequence,
// with analytic backward passes and the four output heads.
//
// Joint layout for an item with text length M (CLS included) and N regions:
//   0           CLS
//   1..M-1      text pieces (token + position + language embeddings)
//   M           IMG tag (token embedding only), present iff N > 0
//   M+1..M+N    regions (projected feature + projected spatial vector)
// Blocks are pre-norm: x += Attn(LN(x)); x += FFN(LN(x)), GELU activation,
// followed by a final LayerNorm.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m3p/common.hpp"
#include "m3p/masking.hpp"

namespace m3p {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int hidden_dim = 32;
  int feedforward_dim = 64;
  int vocab_size = 0;
  int n_language_ids = 1;
  int max_text_len = kDefaultMaxTextLen;
  int max_regions = 16;
  int feature_dim = 16;
  int n_classes = 8;
  double dropout = 0.1;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParameters {
  Matrix ln1_gain, ln1_bias;
  Matrix query, query_bias, key, key_bias, value, value_bias, output, output_bias;
  Matrix ln2_gain, ln2_bias;
  Matrix ff_in, ff_in_bias, ff_out, ff_out_bias;
};

// Biases and LayerNorm vectors are stored as 1 x n matrices so that every
// tensor can be visited uniformly.
struct EncoderParameters {
  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // max_text_len x d
  Matrix language_embedding;  // n_language_ids x d
  Matrix visual_projection, visual_bias;    // d_v x d
  Matrix spatial_projection, spatial_bias;  // 5 x d
  std::vector<LayerParameters> layers;
  Matrix final_gain, final_bias;
  Matrix mlm_weight, mlm_bias;                    // d x vocab
  Matrix mrm_regression, mrm_regression_bias;     // d x d_v
  Matrix mrm_class, mrm_class_bias;               // d x K
  Matrix vlm_weight, vlm_bias;                    // d x 1

  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  EncoderParameters zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

// Weights ~ N(0, init_std^2); LayerNorm gains 1; biases 0.
EncoderParameters init_parameters(const ModelConfig& config);

// Non-owning view of one joint input. An empty `attention` attends every
// text position; null region pointers give a text-only sequence.
struct EncoderInput {
  std::span<const int> token_ids;
  std::span<const int> language_ids;
  std::span<const std::uint8_t> attention;
  const Matrix* region_features = nullptr;
  const Matrix* region_spatial = nullptr;
};

struct ItemLayout {
  int text_len = 0;
  int n_regions = 0;
  int total() const { return text_len + (n_regions > 0 ? 1 + n_regions : 0); }
  int img_position() const { return text_len; }
  int region_position(int r) const { return text_len + 1 + r; }
};

struct ForwardCache;  // defined in model.cpp

class EncoderOutput {
 public:
  EncoderOutput();
  ~EncoderOutput();
  EncoderOutput(EncoderOutput&&) noexcept;
  EncoderOutput& operator=(EncoderOutput&&) noexcept;

  std::size_t size() const { return hidden.size(); }
  Matrix cls() const;  // B x d, row b = hidden[b].row(0)

  std::vector<Matrix> hidden;  // per item: total() x d
  std::vector<ItemLayout> layouts;
  std::vector<ForwardCache> caches;
};

// Dropout is applied only when `dropout_rng` is non-null.
EncoderOutput encode(const EncoderParameters& params, const ModelConfig& config,
                     std::span<const EncoderInput> inputs, Rng* dropout_rng = nullptr);

EncoderOutput encode(const EncoderParameters& params, const ModelConfig& config, const TextBatch& text,
                     const std::vector<RegionSet>* regions = nullptr, Rng* dropout_rng = nullptr);

// Accumulates parameter gradients given dLoss/dHidden per item.
void encode_backward(const EncoderParameters& params, const ModelConfig& config, const EncoderOutput& output,
                     std::span<const Matrix> d_hidden, EncoderParameters& grads);

// Sum of the three embedding rows at a text position, before the encoder.
Eigen::RowVectorXd text_embedding(const EncoderParameters& params, int token_id, int position, int language_id);

// |positions| x vocab scores at text positions of one item.
Matrix mlm_logits(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                  std::span<const int> positions);
void mlm_logits_backward(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                         std::span<const int> positions, const Matrix& d_logits, EncoderParameters& grads,
                         Matrix& d_hidden);

struct MrmOutputs {
  Matrix regression;    // |regions| x d_v
  Matrix class_scores;  // |regions| x K (pre-softmax)
};

// `region_indices` are 0-based indices into the item's region sequence.
MrmOutputs mrm_outputs(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                       std::span<const int> region_indices);
void mrm_outputs_backward(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                          std::span<const int> region_indices, const Matrix& d_regression,
                          const Matrix& d_class_scores, EncoderParameters& grads, Matrix& d_hidden);

// Pre-sigmoid matching score per item, read from the CLS vector.
std::vector<double> vlm_score(const EncoderParameters& params, const EncoderOutput& output);
void vlm_score_backward(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                        double d_score, EncoderParameters& grads, Matrix& d_hidden);

Matrix softmax_rows(const Matrix& logits);

}  // namespace m3p
