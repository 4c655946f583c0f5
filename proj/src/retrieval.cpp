// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace m3p {

void RetrievalSplit::validate() const {
  if (images.size() < 2) throw DataError("retrieval split needs at least two images");
  if (image_ids.size() != images.size()) throw DataError("retrieval split: image id list size mismatch");
  for (const auto& regions : images) {
    if (regions.empty()) throw DataError("retrieval split: image without regions");
  }
  if (captions.empty()) throw DataError("retrieval split has no captions");
  for (const auto& c : captions) {
    if (c.image >= images.size()) throw DataError("retrieval split: caption refers to a missing image");
    if (c.words.empty()) throw DataError("retrieval split: empty caption");
  }
}

RetrievalSplit make_retrieval_split(const std::vector<CaptionedImage>& records) {
  RetrievalSplit split;
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    std::size_t image = split.images.size();
    if (!rec.image_id.empty()) {
      const auto [it, inserted] = by_id.emplace(rec.image_id, image);
      if (!inserted) {
        image = it->second;
        if (split.images[image] != rec.regions) {
          throw DataError("records sharing image id '" + rec.image_id + "' have different regions");
        }
      }
    }
    if (image == split.images.size()) {
      split.images.push_back(rec.regions);
      split.image_ids.push_back(rec.image_id.empty() ? "#" + std::to_string(r) : rec.image_id);
    }
    split.captions.push_back({rec.caption, rec.language, image});
  }
  split.validate();
  return split;
}

RetrievalSplit merge_splits(const std::vector<const RetrievalSplit*>& splits) {
  RetrievalSplit merged;
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const std::size_t offset = merged.images.size();
    for (std::size_t i = 0; i < splits[s]->images.size(); ++i) {
      merged.images.push_back(splits[s]->images[i]);
      merged.image_ids.push_back(std::to_string(s) + ":" + splits[s]->image_ids[i]);
    }
    for (auto c : splits[s]->captions) {
      c.image += offset;
      merged.captions.push_back(std::move(c));
    }
  }
  merged.validate();
  return merged;
}

RetrievalSplit translate_split(const RetrievalSplit& split, const BilingualLexicon& lexicon,
                               const std::string& language) {
  RetrievalSplit out = split;
  for (auto& c : out.captions) {
    c.words = translate_words(c.words, lexicon, language);
    c.language = language;
  }
  return out;
}

void FineTuneConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("finetune: learning_rate must be positive");
  if (negatives_per_positive < 1) throw ConfigError("finetune: negatives_per_positive must be >= 1");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  if (steps < 0) throw ConfigError("finetune: steps must be >= 0");
  if (!(replace_prob >= 0 && replace_prob <= 1) || !(mix_ratio >= 0 && mix_ratio <= 1)) {
    throw ConfigError("finetune: probabilities must lie in [0,1]");
  }
}

namespace {

CodeSwitchPolicy finetune_policy(const FineTuneConfig& config, const BilingualLexicon* lexicon) {
  CodeSwitchPolicy policy;
  if (config.mode != FineTuneMode::kMct) return policy;
  if (!lexicon || lexicon->empty()) throw ConfigError("code-switched fine-tuning needs a non-empty lexicon");
  policy.lexicon = lexicon;
  policy.replace_prob = config.replace_prob;
  policy.mix_ratio = config.mix_ratio;
  policy.languages = config.mct_languages;
  if (policy.languages.empty()) policy.languages.assign(lexicon->languages().begin(), lexicon->languages().end());
  policy.validate();
  return policy;
}

TextStream caption_stream(const RetrievalCaption& caption, const Tokenizer& tokenizer, const ModelConfig& model,
                          LanguageIdPolicy ids) {
  return encode_caption(caption.words, {}, tokenizer, model.max_text_len, ids, caption.language);
}

}  // namespace

VlmPairBatch sample_finetune_batch(const RetrievalSplit& split, const Tokenizer& tokenizer, const ModelConfig& model,
                                   const FineTuneConfig& config, const BilingualLexicon* lexicon, Rng& rng) {
  CodeSwitchPolicy policy = finetune_policy(config, lexicon);
  const bool mct = config.mode == FineTuneMode::kMct;
  auto text_of = [&](std::size_t c) {
    const auto& caption = split.captions[c];
    if (mct && uniform01(rng) < config.mix_ratio) {
      policy.source_language = caption.language;
      const SwitchedCaption cs = code_switch_caption(caption.words, policy, rng);
      return encode_caption(cs.words, cs.languages, tokenizer, model.max_text_len, config.language_ids,
                            caption.language);
    }
    return caption_stream(caption, tokenizer, model, config.language_ids);
  };

  VlmPairBatch batch;
  for (int p = 0; p < config.batch_size; ++p) {
    const std::size_t c = uniform_index(rng, split.captions.size());
    const std::size_t image = split.captions[c].image;
    const RegionSet regions = make_region_set(split.images[image]);
    const TextStream text = text_of(c);
    batch.pairs.push_back({text, regions, 1, c, image});
    for (int k = 0; k < config.negatives_per_positive; ++k) {
      if (uniform01(rng) < 0.5) {
        std::size_t other = uniform_index(rng, split.images.size() - 1);
        if (other >= image) ++other;
        batch.pairs.push_back({text, make_region_set(split.images[other]), 0, c, other});
      } else {
        std::size_t other = uniform_index(rng, split.captions.size());
        while (split.captions[other].image == image) other = uniform_index(rng, split.captions.size());
        batch.pairs.push_back({text_of(other), regions, 0, other, image});
      }
    }
  }
  return batch;
}

FineTuneResult fine_tune(const EncoderParameters& initial, const ModelConfig& model, const Tokenizer& tokenizer,
                         const RetrievalSplit& train, const FineTuneConfig& config,
                         const BilingualLexicon* lexicon) {
  config.validate();
  train.validate();
  const std::size_t first_image = train.captions.front().image;
  if (std::all_of(train.captions.begin(), train.captions.end(),
                  [&](const RetrievalCaption& c) { return c.image == first_image; })) {
    throw DataError("fine-tuning needs captions of at least two images");
  }
  finetune_policy(config, lexicon);
  FineTuneResult result{initial, {}};
  AdamOptimizer optimizer(result.params, config.beta1, config.beta2);
  Rng batch_rng(derive_seed(config.seed, 11));
  Rng dropout_rng(derive_seed(config.seed, 12));
  for (int step = 0; step < config.steps; ++step) {
    const VlmPairBatch batch = sample_finetune_batch(train, tokenizer, model, config, lexicon, batch_rng);
    EncoderParameters grads = result.params.zeros_like();
    const double loss = mc_vlm_loss(result.params, model, batch, &grads, &dropout_rng);
    if (!std::isfinite(loss) || !grads.all_finite()) {
      throw NumericalError("non-finite fine-tuning loss at step " + std::to_string(step));
    }
    optimizer.step(result.params, grads, warmup_learning_rate(config.learning_rate, step, config.warmup_steps));
    result.losses.push_back(loss);
  }
  if (!result.params.all_finite()) throw NumericalError("non-finite parameters after fine-tuning");
  return result;
}

void ScoreMatrix::validate() const {
  if (static_cast<std::size_t>(scores.cols()) != caption_image.size()) {
    throw DataError("score matrix: ground truth size does not match caption count");
  }
  if (!scores.allFinite()) throw DataError("score matrix has non-finite entries");
  for (auto image : caption_image) {
    if (image >= static_cast<std::size_t>(scores.rows())) throw DataError("score matrix: missing ground-truth image");
  }
}

ScoreMatrix score_all_pairs(const EncoderParameters& params, const ModelConfig& model, const Tokenizer& tokenizer,
                            const RetrievalSplit& split, std::size_t batch_size) {
  split.validate();
  if (batch_size == 0) throw ConfigError("scoring batch size must be positive");
  std::vector<RegionSet> regions;
  regions.reserve(split.images.size());
  for (const auto& image : split.images) regions.push_back(make_region_set(image));
  std::vector<TextStream> texts;
  texts.reserve(split.captions.size());
  for (const auto& c : split.captions) texts.push_back(caption_stream(c, tokenizer, model, LanguageIdPolicy::kKeepSource));

  ScoreMatrix out;
  out.scores.resize(static_cast<Eigen::Index>(regions.size()), static_cast<Eigen::Index>(texts.size()));
  for (const auto& c : split.captions) out.caption_image.push_back(c.image);

  const std::size_t total = regions.size() * texts.size();
  std::vector<EncoderInput> inputs;
  for (std::size_t start = 0; start < total; start += batch_size) {
    const std::size_t end = std::min(total, start + batch_size);
    inputs.clear();
    for (std::size_t k = start; k < end; ++k) {
      const auto& t = texts[k % texts.size()];
      const auto& r = regions[k / texts.size()];
      inputs.push_back({t.token_ids, t.language_ids, {}, &r.features, &r.spatial});
    }
    const auto scores = vlm_score(params, encode(params, model, inputs));
    for (std::size_t k = start; k < end; ++k) {
      out.scores(static_cast<Eigen::Index>(k / texts.size()), static_cast<Eigen::Index>(k % texts.size())) =
          scores[k - start];
    }
  }
  return out;
}

double score_pair(const EncoderParameters& params, const ModelConfig& model, const Tokenizer& tokenizer,
                  const RetrievalSplit& split, std::size_t image, std::size_t caption) {
  const RegionSet regions = make_region_set(split.images.at(image));
  const TextStream text = caption_stream(split.captions.at(caption), tokenizer, model, LanguageIdPolicy::kKeepSource);
  const EncoderInput input{text.token_ids, text.language_ids, {}, &regions.features, &regions.spatial};
  return vlm_score(params, encode(params, model, std::span<const EncoderInput>(&input, 1))).front();
}

namespace {

// 0-based rank of `target` among `values`: higher scores first, ties to the
// lower index.
template <class Vec>
std::size_t rank_of(const Vec& values, Eigen::Index target) {
  const double v = values(target);
  std::size_t rank = 0;
  for (Eigen::Index j = 0; j < values.size(); ++j) {
    if (values(j) > v || (values(j) == v && j < target)) ++rank;
  }
  return rank;
}

}  // namespace

MeanRecallReport mean_recall(const ScoreMatrix& matrix) {
  matrix.validate();
  const Eigen::Index n_images = matrix.scores.rows();
  const Eigen::Index n_captions = matrix.scores.cols();
  std::vector<std::size_t> best_caption_rank(static_cast<std::size_t>(n_images), SIZE_MAX);
  std::vector<std::size_t> image_has_caption(static_cast<std::size_t>(n_images), 0);
  for (Eigen::Index c = 0; c < n_captions; ++c) {
    image_has_caption[matrix.caption_image[static_cast<std::size_t>(c)]] = 1;
  }

  MeanRecallReport report;
  std::array<std::size_t, 3> t2i_hits{}, i2t_hits{};
  for (Eigen::Index c = 0; c < n_captions; ++c) {
    const auto gt = static_cast<Eigen::Index>(matrix.caption_image[static_cast<std::size_t>(c)]);
    const std::size_t rank = rank_of(matrix.scores.col(c), gt);
    for (std::size_t k = 0; k < kRecallCutoffs.size(); ++k) t2i_hits[k] += rank < std::size_t(kRecallCutoffs[k]);
  }
  std::size_t image_queries = 0;
  for (Eigen::Index i = 0; i < n_images; ++i) {
    if (!image_has_caption[static_cast<std::size_t>(i)]) continue;
    ++image_queries;
    const auto row = matrix.scores.row(i);
    std::size_t best = SIZE_MAX;
    for (Eigen::Index c = 0; c < n_captions; ++c) {
      if (static_cast<Eigen::Index>(matrix.caption_image[static_cast<std::size_t>(c)]) == i) {
        best = std::min(best, rank_of(row, c));
      }
    }
    for (std::size_t k = 0; k < kRecallCutoffs.size(); ++k) i2t_hits[k] += best < std::size_t(kRecallCutoffs[k]);
  }
  double sum = 0;
  for (std::size_t k = 0; k < kRecallCutoffs.size(); ++k) {
    report.text_to_image[k] = 100.0 * static_cast<double>(t2i_hits[k]) / static_cast<double>(n_captions);
    report.image_to_text[k] = 100.0 * static_cast<double>(i2t_hits[k]) / static_cast<double>(image_queries);
    sum += report.text_to_image[k] + report.image_to_text[k];
  }
  report.mean_recall = sum / 6.0;
  return report;
}

std::string to_string(RetrievalSetting setting) {
  switch (setting) {
    case RetrievalSetting::kZeroShot: return "zero_shot";
    case RetrievalSetting::kFtEn: return "ft_en";
    case RetrievalSetting::kFtEach: return "ft_each";
    case RetrievalSetting::kFtAll: return "ft_all";
  }
  return "unknown";
}

RetrievalSetting parse_setting(const std::string& name) {
  for (auto s : {RetrievalSetting::kZeroShot, RetrievalSetting::kFtEn, RetrievalSetting::kFtEach,
                 RetrievalSetting::kFtAll}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown retrieval setting '" + name + "'");
}

SettingResult run_setting(const EncoderParameters& params, const ModelConfig& model, const Tokenizer& tokenizer,
                          const std::map<std::string, LanguageData>& datasets, RetrievalSetting setting,
                          const FineTuneConfig& config, const BilingualLexicon* lexicon,
                          const std::vector<std::string>& languages) {
  std::vector<std::string> langs = languages;
  if (langs.empty()) {
    for (const auto& [lang, data] : datasets) langs.push_back(lang);
  }
  auto data_for = [&](const std::string& lang) -> const LanguageData& {
    const auto it = datasets.find(lang);
    if (it == datasets.end()) throw DataError("no retrieval data for language '" + lang + "'");
    return it->second;
  };
  auto train_for = [&](const std::string& lang) -> const RetrievalSplit& {
    const auto& train = data_for(lang).train;
    if (train.captions.empty()) throw DataError("no training split for language '" + lang + "'");
    return train;
  };
  for (const auto& lang : langs) data_for(lang);

  SettingResult result;
  result.setting = setting;
  auto evaluate_all = [&](const EncoderParameters& p) {
    for (const auto& lang : langs) {
      result.reports[lang] = mean_recall(score_all_pairs(p, model, tokenizer, data_for(lang).test));
    }
  };
  switch (setting) {
    case RetrievalSetting::kZeroShot:
      evaluate_all(params);
      break;
    case RetrievalSetting::kFtEn: {
      const auto tuned = fine_tune(params, model, tokenizer, train_for(kEnglish), config, lexicon);
      result.finetune_runs.push_back({kEnglish});
      evaluate_all(tuned.params);
      break;
    }
    case RetrievalSetting::kFtEach:
      for (const auto& lang : langs) {
        const auto tuned = fine_tune(params, model, tokenizer, train_for(lang), config, lexicon);
        result.finetune_runs.push_back({lang});
        result.reports[lang] = mean_recall(score_all_pairs(tuned.params, model, tokenizer, data_for(lang).test));
      }
      break;
    case RetrievalSetting::kFtAll: {
      std::vector<const RetrievalSplit*> parts;
      for (const auto& lang : langs) parts.push_back(&train_for(lang));
      const auto tuned = fine_tune(params, model, tokenizer, merge_splits(parts), config, lexicon);
      result.finetune_runs.push_back(langs);
      evaluate_all(tuned.params);
      break;
    }
  }
  return result;
}

}  // namespace m3p
