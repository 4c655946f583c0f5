// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/objectives.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace m3p {

namespace {

std::vector<EncoderInput> mlm_inputs(const MlmMaskedBatch& batch) {
  std::vector<EncoderInput> inputs(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    inputs[b].token_ids = batch.input_ids[b];
    inputs[b].language_ids = batch.language_ids[b];
    inputs[b].attention = batch.attention_mask[b];
    if (!batch.regions.empty()) {
      inputs[b].region_features = &batch.regions[b].features;
      inputs[b].region_spatial = &batch.regions[b].spatial;
    }
  }
  return inputs;
}

std::vector<Matrix> zero_hidden_grads(const EncoderOutput& out) {
  std::vector<Matrix> d;
  d.reserve(out.size());
  for (const auto& h : out.hidden) d.push_back(Matrix::Zero(h.rows(), h.cols()));
  return d;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  return mx + std::log((row.array() - mx).exp().sum());
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double mlm_loss(const EncoderParameters& params, const ModelConfig& config, const MlmMaskedBatch& batch,
                EncoderParameters* grads, Rng* dropout_rng) {
  if (!batch.regions.empty() && batch.regions.size() != batch.size()) {
    throw ConfigError("MLM batch: region sets must match batch size");
  }
  const std::size_t n_masked = batch.masked_count();
  if (n_masked == 0) return 0.0;

  const auto inputs = mlm_inputs(batch);
  const EncoderOutput out = encode(params, config, inputs, dropout_rng);
  auto d_hidden = grads ? zero_hidden_grads(out) : std::vector<Matrix>{};
  const double inv_n = 1.0 / static_cast<double>(n_masked);

  double total = 0.0;
  std::vector<int> positions, targets;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    positions.clear();
    targets.clear();
    for (std::size_t t = 0; t < batch.labels[b].size(); ++t) {
      if (batch.labels[b][t] != MlmMaskedBatch::kIgnore) {
        positions.push_back(static_cast<int>(t));
        targets.push_back(batch.labels[b][t]);
      }
    }
    if (positions.empty()) continue;
    const Matrix logits = mlm_logits(params, out, b, positions);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      total += log_sum_exp(logits.row(row)) - logits(row, targets[i]);
    }
    if (grads) {
      Matrix d_logits = softmax_rows(logits);
      for (std::size_t i = 0; i < targets.size(); ++i) d_logits(static_cast<Eigen::Index>(i), targets[i]) -= 1.0;
      d_logits *= inv_n;
      mlm_logits_backward(params, out, b, positions, d_logits, *grads, d_hidden[b]);
    }
  }
  if (grads) encode_backward(params, config, out, d_hidden, *grads);
  return total * inv_n;
}

double xmlm_loss(const EncoderParameters& params, const ModelConfig& config, const MlmMaskedBatch& batch,
                 EncoderParameters* grads, Rng* dropout_rng) {
  if (!batch.regions.empty()) throw ConfigError("xMLM batches are text-only");
  return mlm_loss(params, config, batch, grads, dropout_rng);
}

double mc_mlm_loss(const EncoderParameters& params, const ModelConfig& config, const MlmMaskedBatch& batch,
                   EncoderParameters* grads, Rng* dropout_rng) {
  if (batch.regions.size() != batch.size()) throw ConfigError("MC-MLM batches need a region set per item");
  return mlm_loss(params, config, batch, grads, dropout_rng);
}

double mc_mrm_loss(const EncoderParameters& params, const ModelConfig& config, const MrmMaskedBatch& batch,
                   EncoderParameters* grads, Rng* dropout_rng) {
  const std::size_t items = batch.size();
  if (batch.text.size() != items) throw ConfigError("MRM batch: text context must match batch size");
  std::size_t n_masked = 0;
  for (const auto& idx : batch.mask_indices) n_masked += idx.size();
  if (items == 0 || n_masked == 0) return 0.0;

  const EncoderOutput out = encode(params, config, batch.text, &batch.regions, dropout_rng);
  auto d_hidden = grads ? zero_hidden_grads(out) : std::vector<Matrix>{};
  const double inv_items = 1.0 / static_cast<double>(items);
  const double inv_dim = 1.0 / static_cast<double>(config.feature_dim);

  double total = 0.0;
  for (std::size_t b = 0; b < items; ++b) {
    const auto& indices = batch.mask_indices[b];
    if (indices.empty()) continue;
    if (batch.target_features[b].rows() != static_cast<Eigen::Index>(indices.size()) ||
        batch.target_classes[b].size() != indices.size()) {
      throw ConfigError("MRM batch: missing targets for masked regions");
    }
    for (int k : batch.target_classes[b]) {
      if (k < 0 || k >= config.n_classes) throw DataError("MRM target class outside [0, n_classes)");
    }
    const MrmOutputs heads = mrm_outputs(params, out, b, indices);
    const Matrix diff = heads.regression - batch.target_features[b];
    total += diff.squaredNorm() * inv_dim;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      total += log_sum_exp(heads.class_scores.row(row)) - heads.class_scores(row, batch.target_classes[b][k]);
    }
    if (grads) {
      const Matrix d_regression = diff * (2.0 * inv_dim * inv_items);
      Matrix d_class = softmax_rows(heads.class_scores);
      for (std::size_t k = 0; k < indices.size(); ++k) {
        d_class(static_cast<Eigen::Index>(k), batch.target_classes[b][k]) -= 1.0;
      }
      d_class *= inv_items;
      mrm_outputs_backward(params, out, b, indices, d_regression, d_class, *grads, d_hidden[b]);
    }
  }
  if (grads) encode_backward(params, config, out, d_hidden, *grads);
  return total * inv_items;
}

double mc_vlm_loss(const EncoderParameters& params, const ModelConfig& config, const VlmPairBatch& batch,
                   EncoderParameters* grads, Rng* dropout_rng) {
  if (batch.pairs.empty()) return 0.0;
  std::vector<EncoderInput> inputs(batch.pairs.size());
  for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
    const auto& p = batch.pairs[i];
    if (p.label != 0 && p.label != 1) throw ConfigError("VLM labels must be 0 or 1");
    inputs[i].token_ids = p.text.token_ids;
    inputs[i].language_ids = p.text.language_ids;
    inputs[i].region_features = &p.regions.features;
    inputs[i].region_spatial = &p.regions.spatial;
  }
  const EncoderOutput out = encode(params, config, inputs, dropout_rng);
  const auto scores = vlm_score(params, out);
  auto d_hidden = grads ? zero_hidden_grads(out) : std::vector<Matrix>{};
  const double inv_n = 1.0 / static_cast<double>(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double y = batch.pairs[i].label;
    total += softplus(scores[i]) - y * scores[i];
    if (grads) vlm_score_backward(params, out, i, (sigmoid(scores[i]) - y) * inv_n, *grads, d_hidden[i]);
  }
  if (grads) encode_backward(params, config, out, d_hidden, *grads);
  return total * inv_n;
}

// ---------------------------------------------------------------- optimizer

AdamOptimizer::AdamOptimizer(const EncoderParameters& like, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, m] : like.tensors()) {
    m_.push_back(Matrix::Zero(m->rows(), m->cols()));
    v_.push_back(Matrix::Zero(m->rows(), m->cols()));
  }
}

void AdamOptimizer::step(EncoderParameters& params, const EncoderParameters& grads, double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.tensors();
  const auto g = grads.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Matrix& grad = *g[i].second;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad.cwiseProduct(grad);
    p[i].second->array() -=
        learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double warmup_learning_rate(double base, int step, int warmup_steps) {
  if (warmup_steps <= 0 || step >= warmup_steps) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

// ---------------------------------------------------------------- config & reports

std::string to_string(TaskGroup group) {
  switch (group) {
    case TaskGroup::kMultilingual: return "multilingual";
    case TaskGroup::kMultimodal: return "multimodal";
    case TaskGroup::kJoint: return "joint";
  }
  return "unknown";
}

void PretrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("pretrain: learning_rate must be positive");
  if (batch_size < 2) throw ConfigError("pretrain: batch_size must be >= 2");
  if (total_steps < 0) throw ConfigError("pretrain: total_steps must be >= 0");
  if (!(language_smoothing > 0 && language_smoothing <= 1)) throw ConfigError("pretrain: smoothing must lie in (0,1]");
  for (double p : {mix_ratio, replace_prob, mlm_rate, mrm_rate, mrm_zero_prob}) {
    if (!(p >= 0 && p <= 1)) throw ConfigError("pretrain: probabilities must lie in [0,1]");
  }
  if (negatives_per_positive < 1) throw ConfigError("pretrain: negatives_per_positive must be >= 1");
  if (!tasks.multilingual() && !tasks.multimodal()) throw ConfigError("pretrain: at least one task must be enabled");
}

std::string to_json_line(const LossReport& r) {
  nlohmann::json losses = nlohmann::json::object();
  if (r.xmlm) losses["xmlm"] = *r.xmlm;
  if (r.mc_mlm) losses["mc_mlm"] = *r.mc_mlm;
  if (r.mc_mrm) losses["mc_mrm"] = *r.mc_mrm;
  if (r.mc_vlm) losses["mc_vlm"] = *r.mc_vlm;
  nlohmann::json j{{"step", r.step}, {"group", to_string(r.group)}, {"losses", losses}, {"total", r.total},
                   {"lr", r.learning_rate}};
  return j.dump();
}

void write_loss_trace(const std::vector<LossReport>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write loss trace " + path.string());
  for (const auto& r : trace) out << to_json_line(r) << '\n';
}

// ---------------------------------------------------------------- batches

PretrainSampler::PretrainSampler(const PretrainCorpora& corpora, const BilingualLexicon* lexicon,
                                 const Tokenizer& tokenizer, const ModelConfig& model, const PretrainConfig& config)
    : corpora_(corpora), tokenizer_(tokenizer), model_(model), config_(config) {
  config.validate();
  if (config.tasks.multilingual() && corpora.documents.empty()) {
    throw DataError("xMLM is enabled but the text corpus is empty");
  }
  if (config.tasks.multimodal() && corpora.images.size() < 2) {
    throw DataError("multimodal tasks need at least two captioned images");
  }
  for (std::size_t i = 0; i < corpora.documents.size(); ++i) {
    docs_by_language_[corpora.documents[i].language].push_back(i);
  }
  if (!docs_by_language_.empty()) {
    std::vector<std::pair<std::string, double>> counts;
    for (const auto& [lang, idx] : docs_by_language_) counts.emplace_back(lang, static_cast<double>(idx.size()));
    sampler_ = build_language_sampler(counts, config.language_smoothing);
  }
  policy_.lexicon = lexicon;
  policy_.replace_prob = config.replace_prob;
  policy_.mix_ratio = config.mix_ratio;
  if (config.mct && config.tasks.multimodal()) {
    if (!lexicon || lexicon->empty()) throw DataError("code-switched training needs a non-empty lexicon");
    policy_.languages = config.mct_languages;
    if (policy_.languages.empty()) policy_.languages.assign(lexicon->languages().begin(), lexicon->languages().end());
    policy_.validate();
  }
}

TaskGroup PretrainSampler::group_for_step(int step) const {
  const bool ml = config_.tasks.multilingual();
  const bool mm = config_.tasks.multimodal();
  if (config_.schedule == Schedule::kJoint && ml && mm) return TaskGroup::kJoint;
  if (ml && mm) return step % 2 == 0 ? TaskGroup::kMultilingual : TaskGroup::kMultimodal;
  return ml ? TaskGroup::kMultilingual : TaskGroup::kMultimodal;
}

MlmMaskedBatch PretrainSampler::next_multilingual(Rng& rng) {
  std::vector<TextStream> streams;
  for (int i = 0; i < config_.batch_size; ++i) {
    const auto& docs = docs_by_language_.at(sampler_->sample(rng));
    const auto& doc = corpora_.documents[docs[uniform_index(rng, docs.size())]];
    streams.push_back(encode_text_stream(doc, tokenizer_, model_.max_text_len));
  }
  return apply_mlm_masking(pad_text_batch(streams), tokenizer_, config_.mlm_rate, rng);
}

MultimodalStream PretrainSampler::english_stream(const CaptionedImage& image) const {
  return build_multimodal_stream(image.caption, {}, image.regions, tokenizer_, model_.max_text_len,
                                 config_.language_ids, image.language);
}

MultimodalStream PretrainSampler::switched_stream(const CaptionedImage& image, Rng& rng) const {
  CodeSwitchPolicy policy = policy_;
  policy.source_language = image.language;
  const SwitchedCaption cs = code_switch_caption(image.caption, policy, rng);
  return build_multimodal_stream(cs.words, cs.languages, image.regions, tokenizer_, model_.max_text_len,
                                 config_.language_ids, image.language);
}

MultimodalBatch PretrainSampler::next_multimodal(Rng& rng) {
  MultimodalBatch batch;
  const CaptionedImage* current = nullptr;
  auto mixer = mix_streams<MultimodalStream>([&] { return english_stream(*current); },
                                             [&] { return switched_stream(*current, rng); },
                                             config_.mct ? config_.mix_ratio : 0.0);
  std::vector<MultimodalStream> positives;
  std::vector<int> image_ids;
  for (int i = 0; i < config_.batch_size; ++i) {
    const std::size_t pick = uniform_index(rng, corpora_.images.size());
    current = &corpora_.images[pick];
    image_ids.push_back(static_cast<int>(pick));
    positives.push_back(mixer.next(rng));
  }
  batch.switched_items = mixer.switched_count();

  std::vector<TextStream> texts;
  std::vector<RegionSet> regions;
  for (const auto& p : positives) {
    texts.push_back(p.text);
    regions.push_back(p.regions);
  }
  const TextBatch padded = pad_text_batch(texts);
  batch.mlm = apply_mlm_masking(padded, tokenizer_, config_.mlm_rate, rng);
  batch.mlm.regions = regions;
  batch.mrm = apply_mrm_masking(regions, config_.mrm_rate, config_.mrm_zero_prob, rng);
  batch.mrm.text = padded;
  batch.vlm = sample_vlm_pairs(positives, config_.negatives_per_positive, rng, &image_ids);
  return batch;
}

GroupBatch PretrainSampler::next(int step, Rng& rng) {
  GroupBatch batch;
  batch.group = group_for_step(step);
  if (batch.group != TaskGroup::kMultimodal) batch.multilingual = next_multilingual(rng);
  if (batch.group != TaskGroup::kMultilingual) batch.multimodal = next_multimodal(rng);
  return batch;
}

// ---------------------------------------------------------------- training loop

LossReport compute_group_gradients(const EncoderParameters& params, const ModelConfig& model,
                                   const PretrainConfig& config, const GroupBatch& batch, EncoderParameters& grads,
                                   Rng* dropout_rng) {
  LossReport report;
  report.group = batch.group;
  const TaskToggles& tasks = config.tasks;
  if (batch.multilingual && tasks.xmlm) {
    report.xmlm = xmlm_loss(params, model, *batch.multilingual, &grads, dropout_rng);
    report.total += *report.xmlm;
  }
  if (batch.multimodal) {
    const MultimodalBatch& mm = *batch.multimodal;
    if (tasks.mc_mlm) {
      report.mc_mlm = mc_mlm_loss(params, model, mm.mlm, &grads, dropout_rng);
      report.total += *report.mc_mlm;
    }
    if (tasks.mc_mrm) {
      report.mc_mrm = mc_mrm_loss(params, model, mm.mrm, &grads, dropout_rng);
      report.total += *report.mc_mrm;
    }
    if (tasks.mc_vlm) {
      report.mc_vlm = mc_vlm_loss(params, model, mm.vlm, &grads, dropout_rng);
      report.total += *report.mc_vlm;
    }
  }
  return report;
}

LossReport pretrain_step(EncoderParameters& params, AdamOptimizer& optimizer, const GroupBatch& batch,
                         const ModelConfig& model, const PretrainConfig& config, int step, Rng* dropout_rng) {
  EncoderParameters grads = params.zeros_like();
  LossReport report = compute_group_gradients(params, model, config, batch, grads, dropout_rng);
  report.step = step;
  report.learning_rate = warmup_learning_rate(config.learning_rate, step, config.warmup_steps);
  if (!std::isfinite(report.total) || !grads.all_finite()) {
    throw NumericalError("non-finite loss at step " + std::to_string(step) + ": " + to_json_line(report));
  }
  optimizer.step(params, grads, report.learning_rate);
  if (!params.all_finite()) {
    throw NumericalError("non-finite parameters after step " + std::to_string(step) + ": " + to_json_line(report));
  }
  return report;
}

PretrainResult pretrain(const PretrainCorpora& corpora, const BilingualLexicon* lexicon, const Tokenizer& tokenizer,
                        const ModelConfig& model, const PretrainConfig& config, const EncoderParameters* initial) {
  config.validate();
  if (corpora.documents.empty() && corpora.images.empty()) throw DataError("pretraining corpora are empty");
  if (model.vocab_size != tokenizer.vocab_size() || model.n_language_ids != tokenizer.n_languages()) {
    throw ConfigError("model config does not match the tokenizer");
  }
  PretrainResult result{initial ? *initial : init_parameters(model), {}};
  PretrainSampler sampler(corpora, lexicon, tokenizer, model, config);
  AdamOptimizer optimizer(result.params, config.beta1, config.beta2);
  Rng batch_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));
  result.trace.reserve(static_cast<std::size_t>(config.total_steps));
  for (int step = 0; step < config.total_steps; ++step) {
    const GroupBatch batch = sampler.next(step, batch_rng);
    result.trace.push_back(pretrain_step(result.params, optimizer, batch, model, config, step, &dropout_rng));
  }
  return result;
}

}  // namespace m3p
