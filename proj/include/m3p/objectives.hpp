// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Pre-training losses and the multitask loop. Each loss returns its scalar
// value and, when `grads` is non-null, accumulates the gradient of that
// scalar into it.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m3p/masking.hpp"
#include "m3p/model.hpp"

namespace m3p {

double mlm_loss(const EncoderParameters& params, const ModelConfig& config, const MlmMaskedBatch& batch,
                EncoderParameters* grads = nullptr, Rng* dropout_rng = nullptr);

// Text-only masked language modeling over the multilingual stream.
double xmlm_loss(const EncoderParameters& params, const ModelConfig& config, const MlmMaskedBatch& batch,
                 EncoderParameters* grads = nullptr, Rng* dropout_rng = nullptr);

// Masked language modeling over caption + regions.
double mc_mlm_loss(const EncoderParameters& params, const ModelConfig& config, const MlmMaskedBatch& batch,
                   EncoderParameters* grads = nullptr, Rng* dropout_rng = nullptr);

// Per item: sum over masked regions of MSE(regression, feature) +
// CE(class scores, detector class); then averaged over items.
double mc_mrm_loss(const EncoderParameters& params, const ModelConfig& config, const MrmMaskedBatch& batch,
                   EncoderParameters* grads = nullptr, Rng* dropout_rng = nullptr);

// Mean binary cross-entropy of sigmoid(score) against the pair labels.
double mc_vlm_loss(const EncoderParameters& params, const ModelConfig& config, const VlmPairBatch& batch,
                   EncoderParameters* grads = nullptr, Rng* dropout_rng = nullptr);

class AdamOptimizer {
 public:
  AdamOptimizer(const EncoderParameters& like, double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-8);

  void step(EncoderParameters& params, const EncoderParameters& grads, double learning_rate);
  long steps() const { return t_; }

 private:
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Linear ramp over `warmup_steps`, constant afterwards.
double warmup_learning_rate(double base, int step, int warmup_steps);

struct TaskToggles {
  bool xmlm = true;
  bool mc_mlm = true;
  bool mc_mrm = true;
  bool mc_vlm = true;

  bool multilingual() const { return xmlm; }
  bool multimodal() const { return mc_mlm || mc_mrm || mc_vlm; }
};

enum class Schedule { kAlternate, kJoint };
enum class TaskGroup { kMultilingual, kMultimodal, kJoint };

std::string to_string(TaskGroup group);

struct PretrainConfig {
  double learning_rate = 1e-4;
  int warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.98;
  int batch_size = 32;  // 1024 in the full-scale recipe
  int total_steps = 1000;
  double language_smoothing = 0.3;
  double mix_ratio = 0.5;
  double replace_prob = 0.5;
  int negatives_per_positive = 1;
  double mlm_rate = 0.15;
  double mrm_rate = 0.15;
  double mrm_zero_prob = 0.9;
  TaskToggles tasks;
  bool mct = true;
  std::vector<std::string> mct_languages;  // empty: every lexicon language
  LanguageIdPolicy language_ids = LanguageIdPolicy::kKeepSource;
  Schedule schedule = Schedule::kAlternate;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossReport {
  int step = 0;
  TaskGroup group = TaskGroup::kMultilingual;
  std::optional<double> xmlm, mc_mlm, mc_mrm, mc_vlm;
  double total = 0.0;
  double learning_rate = 0.0;
};

std::string to_json_line(const LossReport& report);
void write_loss_trace(const std::vector<LossReport>& trace, const std::filesystem::path& path);

struct PretrainCorpora {
  std::vector<MonolingualDocument> documents;
  std::vector<CaptionedImage> images;
};

struct MultimodalBatch {
  MlmMaskedBatch mlm;
  MrmMaskedBatch mrm;
  VlmPairBatch vlm;
  std::size_t switched_items = 0;
};

struct GroupBatch {
  TaskGroup group = TaskGroup::kMultilingual;
  std::optional<MlmMaskedBatch> multilingual;
  std::optional<MultimodalBatch> multimodal;
};

// Draws pre-training batches. The multilingual stream samples a language by
// the smoothed distribution, then a document of that language; the
// multimodal stream mixes English and code-switched caption streams.
class PretrainSampler {
 public:
  PretrainSampler(const PretrainCorpora& corpora, const BilingualLexicon* lexicon, const Tokenizer& tokenizer,
                  const ModelConfig& model, const PretrainConfig& config);

  MlmMaskedBatch next_multilingual(Rng& rng);
  MultimodalBatch next_multimodal(Rng& rng);
  GroupBatch next(int step, Rng& rng);

  TaskGroup group_for_step(int step) const;
  const LanguageSampler* language_sampler() const { return sampler_ ? &*sampler_ : nullptr; }

 private:
  MultimodalStream english_stream(const CaptionedImage& image) const;
  MultimodalStream switched_stream(const CaptionedImage& image, Rng& rng) const;

  const PretrainCorpora& corpora_;
  const Tokenizer& tokenizer_;
  const ModelConfig& model_;
  const PretrainConfig& config_;
  CodeSwitchPolicy policy_;
  std::optional<LanguageSampler> sampler_;
  std::map<std::string, std::vector<std::size_t>> docs_by_language_;
};

// Computes the enabled losses of one group batch and accumulates their
// gradients, in the order xMLM, MC-MLM, MC-MRM, MC-VLM.
LossReport compute_group_gradients(const EncoderParameters& params, const ModelConfig& model,
                                   const PretrainConfig& config, const GroupBatch& batch, EncoderParameters& grads,
                                   Rng* dropout_rng);

// One Adam update on the summed (equal-weight) loss of the batch's group.
// Throws NumericalError on a non-finite loss or update.
LossReport pretrain_step(EncoderParameters& params, AdamOptimizer& optimizer, const GroupBatch& batch,
                         const ModelConfig& model, const PretrainConfig& config, int step, Rng* dropout_rng);

struct PretrainResult {
  EncoderParameters params;
  std::vector<LossReport> trace;
};

PretrainResult pretrain(const PretrainCorpora& corpora, const BilingualLexicon* lexicon, const Tokenizer& tokenizer,
                        const ModelConfig& model, const PretrainConfig& config,
                        const EncoderParameters* initial = nullptr);

}  // namespace m3p
