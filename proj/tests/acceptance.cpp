// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "fixtures.hpp"
#include "m3p/cli.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace m3p;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buf[1024];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------- shared toy experiment setup

ModelConfig experiment_model(const Tokenizer& tok, const SyntheticCorpusSpec& spec, std::uint64_t seed) {
  ModelConfig m;
  m.n_layers = 2;
  m.n_heads = 4;
  m.hidden_dim = 32;
  m.feedforward_dim = 64;
  m.vocab_size = tok.vocab_size();
  m.n_language_ids = tok.n_languages();
  m.max_text_len = 32;
  m.feature_dim = spec.feature_dim;
  m.n_classes = spec.n_classes;
  m.dropout = 0.1;
  m.seed = seed;
  return m;
}

PretrainConfig experiment_pretrain(std::uint64_t seed, int steps) {
  PretrainConfig p;
  p.learning_rate = 1e-3;
  p.warmup_steps = 20;
  p.batch_size = 16;
  p.total_steps = steps;
  p.seed = seed;
  return p;
}

FineTuneConfig experiment_finetune(std::uint64_t seed, int steps) {
  FineTuneConfig f;
  f.learning_rate = 3e-4;
  f.steps = steps;
  f.seed = seed;
  return f;
}

// ---------------------------------------------------------------- criteria

Outcome criterion_sampler() {
  Rng rng(101);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 9);
    std::vector<std::pair<std::string, double>> counts;
    for (std::size_t i = 0; i < n; ++i) {
      // Counts spanning several orders of magnitude.
      counts.emplace_back("l" + std::to_string(i), std::pow(10.0, 6.0 * uniform01(rng)));
    }
    const auto sampler = build_language_sampler(counts, 0.3);
    long double total = 0, z = 0;
    for (const auto& [code, c] : counts) total += c;
    std::vector<long double> lambda;
    for (const auto& [code, c] : counts) {
      lambda.push_back(std::pow(static_cast<long double>(c) / total, 0.3L));
      z += lambda.back();
    }
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(sampler.smoothed()[i] - lambda[i] / z)));
    }
  }
  return {worst < 1e-9, fmt("max |lambda - oracle| = %.3g over 50 vectors (tol 1e-9)", worst)};
}

Outcome criterion_masking() {
  std::vector<std::string> words;
  for (int i = 0; i < 50; ++i) words.push_back("w" + std::to_string(i));
  const Tokenizer tok(words, {kEnglish});
  std::vector<TextStream> streams;
  for (int b = 0; b < 64; ++b) {
    TextStream s;
    s.token_ids.push_back(Tokenizer::kCls);
    for (int t = 0; t < 20; ++t) s.token_ids.push_back(Tokenizer::kNumSpecial + (b + t) % 50);
    s.language_ids.assign(s.token_ids.size(), 0);
    for (std::size_t t = 0; t < s.token_ids.size(); ++t) s.positions.push_back(static_cast<int>(t));
    streams.push_back(s);
  }
  const TextBatch batch = pad_text_batch(streams);
  Rng rng(202);
  std::size_t eligible = 0, selected = 0, mask = 0, random = 0, keep = 0;
  while (eligible < 100000) {
    const auto m = apply_mlm_masking(batch, tok, 0.15, rng);
    for (const auto& row : m.actions) {
      for (std::size_t t = 1; t < row.size(); ++t) {
        ++eligible;
        selected += row[t] != MaskAction::kNone;
        mask += row[t] == MaskAction::kMask;
        random += row[t] == MaskAction::kRandom;
        keep += row[t] == MaskAction::kKeep;
      }
    }
  }
  const double sel = static_cast<double>(selected) / static_cast<double>(eligible);
  const double pm = static_cast<double>(mask) / static_cast<double>(selected);
  const double pr = static_cast<double>(random) / static_cast<double>(selected);
  const double pk = static_cast<double>(keep) / static_cast<double>(selected);

  std::vector<RegionSet> regions;
  for (int b = 0; b < 100; ++b) {
    RegionSet r;
    r.features = Matrix::Ones(10, 4);
    r.spatial = Matrix::Constant(10, 5, 0.5);
    r.class_ids.assign(10, 0);
    regions.push_back(r);
  }
  std::size_t total_regions = 0, masked_regions = 0, zeroed = 0;
  while (total_regions < 100000) {
    const auto m = apply_mrm_masking(regions, 0.15, 0.9, rng);
    for (std::size_t b = 0; b < m.size(); ++b) {
      total_regions += m.regions[b].size();
      masked_regions += m.mask_indices[b].size();
      for (auto z : m.zeroed[b]) zeroed += z;
    }
  }
  const double msel = static_cast<double>(masked_regions) / static_cast<double>(total_regions);
  const double mzero = static_cast<double>(zeroed) / static_cast<double>(masked_regions);
  const bool pass = std::abs(sel - 0.15) <= 0.005 && std::abs(pm - 0.8) <= 0.01 && std::abs(pr - 0.1) <= 0.01 &&
                    std::abs(pk - 0.1) <= 0.01 && std::abs(msel - 0.15) <= 0.005 && std::abs(mzero - 0.9) <= 0.01;
  return {pass, fmt("MLM select %.4f split %.4f/%.4f/%.4f over %zu tokens; MRM select %.4f zero %.4f over %zu "
                    "regions",
                    sel, pm, pr, pk, eligible, msel, mzero, total_regions)};
}

Outcome criterion_gradients() {
  ModelConfig c = test::toy_config(200, 2);
  const Tokenizer tok = test::toy_tokenizer(200);
  const auto params = init_parameters(c);
  Rng data(303), pick(304);
  const auto xmlm = test::toy_xmlm_batch(c, tok, data);
  const auto mc_mlm = test::toy_mc_mlm_batch(c, tok, data);
  const auto mrm = test::toy_mrm_batch(c, data);
  const auto vlm = test::toy_vlm_batch(c, data);
  const std::vector<std::pair<std::string, test::LossFn>> losses = {
      {"xMLM", [&](const EncoderParameters& p, EncoderParameters* g) { return xmlm_loss(p, c, xmlm, g); }},
      {"MC-MLM", [&](const EncoderParameters& p, EncoderParameters* g) { return mc_mlm_loss(p, c, mc_mlm, g); }},
      {"MC-MRM", [&](const EncoderParameters& p, EncoderParameters* g) { return mc_mrm_loss(p, c, mrm, g); }},
      {"MC-VLM", [&](const EncoderParameters& p, EncoderParameters* g) { return mc_vlm_loss(p, c, vlm, g); }},
  };
  bool pass = true;
  std::string detail;
  for (const auto& [name, fn] : losses) {
    const auto r = test::gradient_check(params, fn, 0.01, pick);
    pass = pass && r.failures == 0;
    detail += fmt("%s max rel %.2g (%zu entries)%s; ", name.c_str(), r.max_relative_error, r.checked,
                  r.failures ? (" worst " + r.worst_entry).c_str() : "");
  }
  return {pass, detail + "tol 1e-4"};
}

Outcome criterion_loss_oracles() {
  const ModelConfig c = test::toy_config(200, 2);
  const Tokenizer tok = test::toy_tokenizer(200);
  const auto params = init_parameters(c);
  Rng rng(404);
  double worst[4] = {0, 0, 0, 0};
  for (int trial = 0; trial < 20; ++trial) {
    const auto xmlm = test::toy_xmlm_batch(c, tok, rng);
    const auto mc = test::toy_mc_mlm_batch(c, tok, rng);
    const auto mrm = test::toy_mrm_batch(c, rng);
    const auto vlm = test::toy_vlm_batch(c, rng, 3, 2);
    worst[0] = std::max(worst[0], std::abs(xmlm_loss(params, c, xmlm) - test::mlm_oracle(params, c, xmlm)));
    worst[1] = std::max(worst[1], std::abs(mc_mlm_loss(params, c, mc) - test::mlm_oracle(params, c, mc)));
    worst[2] = std::max(worst[2], std::abs(mc_mrm_loss(params, c, mrm) - test::mrm_oracle(params, c, mrm)));
    worst[3] = std::max(worst[3], std::abs(mc_vlm_loss(params, c, vlm) - test::vlm_oracle(params, c, vlm)));
  }
  const bool pass = *std::max_element(worst, worst + 4) < 1e-10;
  return {pass, fmt("max |loss - oracle|: xMLM %.2g, MC-MLM %.2g, MC-MRM %.2g, MC-VLM %.2g (tol 1e-10)", worst[0],
                    worst[1], worst[2], worst[3])};
}

ScoreMatrix random_scores(std::size_t images, std::size_t captions, Rng& rng) {
  ScoreMatrix m;
  m.scores.resize(static_cast<Eigen::Index>(images), static_cast<Eigen::Index>(captions));
  for (Eigen::Index i = 0; i < m.scores.size(); ++i) m.scores.data()[i] = uniform01(rng);
  for (std::size_t c = 0; c < captions; ++c) m.caption_image.push_back(c < images ? c : uniform_index(rng, images));
  if (images == captions) std::shuffle(m.caption_image.begin(), m.caption_image.end(), rng);
  return m;
}

bool same_report(const MeanRecallReport& a, const MeanRecallReport& b) {
  return a.image_to_text == b.image_to_text && a.text_to_image == b.text_to_image && a.mean_recall == b.mean_recall;
}

Outcome criterion_recall() {
  Rng rng(505);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const auto m = random_scores(8, 8, rng);
    mismatches += !same_report(mean_recall(m), test::recall_oracle(m));
  }
  for (int t = 0; t < 100; ++t) {
    const auto m = random_scores(20, 100, rng);
    mismatches += !same_report(mean_recall(m), test::recall_oracle(m));
  }
  double total = 0;
  for (int t = 0; t < 200; ++t) total += mean_recall(random_scores(100, 100, rng)).mean_recall;
  const double mean = total / 200;
  const double expected = 100.0 * (1 + 5 + 10) / (3.0 * 100);
  return {mismatches == 0 && std::abs(mean - expected) <= 0.5,
          fmt("%d/200 oracle mismatches; random-scorer mR %.3f (expected %.3f +- 0.5)", mismatches, mean, expected)};
}

Outcome criterion_overfit() {
  SyntheticCorpusSpec spec;
  spec.caption_count = 64;
  spec.seed = 606;
  const auto corpus = generate_synthetic_multimodal_corpus(spec);
  const Tokenizer tok = Tokenizer::from_corpora({}, corpus.images, nullptr);
  const ModelConfig model = experiment_model(tok, spec, 606);
  PretrainConfig p = experiment_pretrain(606, 500);
  p.tasks.xmlm = false;
  p.mct = false;
  const auto pre = pretrain({{}, corpus.images}, nullptr, tok, model, p);
  const double first = pre.trace.front().total;
  double last = 0;
  for (std::size_t i = pre.trace.size() - 10; i < pre.trace.size(); ++i) last += pre.trace[i].total / 10;
  const double reduction = 1.0 - last / first;

  // VLM fine-tuning on 32 pairs, then BCE over a fixed set of those pairs
  // (each positive with 3 negatives) without dropout.
  const std::vector<CaptionedImage> pairs(corpus.images.begin(), corpus.images.begin() + 32);
  const RetrievalSplit split = make_retrieval_split(pairs);
  FineTuneConfig f = experiment_finetune(606, 300);
  f.learning_rate = 1e-3;
  const auto tuned = fine_tune(pre.params, model, tok, split, f);
  FineTuneConfig eval_batch = experiment_finetune(607, 0);
  eval_batch.batch_size = 256;
  Rng rng(608);
  const double bce = mc_vlm_loss(tuned.params, model, sample_finetune_batch(split, tok, model, eval_batch, nullptr, rng));
  return {reduction >= 0.5 && bce < 0.1,
          fmt("multimodal loss %.3f -> %.3f (mean of last 10 steps), reduction %.1f%% (need >= 50%%); fine-tune BCE "
              "%.4f on 32 pairs (need < 0.1)",
              first, last, 100 * reduction, bce)};
}

Outcome criterion_retrieval_learns() {
  SyntheticCorpusSpec spec;
  spec.seed = 707;
  spec.caption_count = 300;
  const auto text = generate_synthetic_multilingual_corpus(spec);
  const auto pre_images = generate_synthetic_multimodal_corpus(spec, 0).images;
  SyntheticCorpusSpec part = spec;
  part.caption_count = 200;
  const auto train = make_retrieval_split(generate_synthetic_multimodal_corpus(part, 1).images);
  part.caption_count = 100;
  const auto test = make_retrieval_split(generate_synthetic_multimodal_corpus(part, 2).images);
  const Tokenizer tok = Tokenizer::from_corpora(text.documents, pre_images, &text.lexicon);
  const ModelConfig model = experiment_model(tok, spec, 707);
  PretrainConfig p = experiment_pretrain(707, 1500);
  p.mct = false;
  const auto pre = pretrain({text.documents, pre_images}, &text.lexicon, tok, model, p);
  const auto tuned = fine_tune(pre.params, model, tok, train, experiment_finetune(707, 1000));
  const auto report = mean_recall(score_all_pairs(tuned.params, model, tok, test));
  return {report.mean_recall >= 16.0, fmt("English test mR %.2f over 100 candidates (need >= 16; random 5.33)",
                                          report.mean_recall)};
}

struct TransferRun {
  double zs_en[2], zs_x[2];  // [no MCT, MCT] pre-training, zero-shot
  double ft_en[2], ft_x[2];  // [normal, MCT] fine-tuning of the MCT checkpoint
};

TransferRun transfer_run(std::uint64_t seed) {
  SyntheticCorpusSpec spec;
  spec.seed = seed;
  spec.caption_count = 300;
  const auto text = generate_synthetic_multilingual_corpus(spec);
  const auto pre_images = generate_synthetic_multimodal_corpus(spec, 0).images;
  SyntheticCorpusSpec part = spec;
  part.caption_count = 200;
  const auto train = make_retrieval_split(generate_synthetic_multimodal_corpus(part, 1).images);
  part.caption_count = 100;
  const auto test_en = make_retrieval_split(generate_synthetic_multimodal_corpus(part, 2).images);
  const std::string cipher = text.vocabulary.languages.at(1);
  const auto test_x = translate_split(test_en, text.lexicon, cipher);
  const Tokenizer tok = Tokenizer::from_corpora(text.documents, pre_images, &text.lexicon);
  const ModelConfig model = experiment_model(tok, spec, seed);

  TransferRun run{};
  EncoderParameters mct_params;
  for (int mct = 0; mct < 2; ++mct) {
    PretrainConfig p = experiment_pretrain(seed, 3000);
    p.mct = mct == 1;
    auto pre = pretrain({text.documents, pre_images}, &text.lexicon, tok, model, p);
    run.zs_en[mct] = mean_recall(score_all_pairs(pre.params, model, tok, test_en)).mean_recall;
    run.zs_x[mct] = mean_recall(score_all_pairs(pre.params, model, tok, test_x)).mean_recall;
    if (mct) mct_params = std::move(pre.params);
  }
  for (int mode = 0; mode < 2; ++mode) {
    FineTuneConfig f = experiment_finetune(seed, 1000);
    f.mode = mode ? FineTuneMode::kMct : FineTuneMode::kNormal;
    const auto tuned = fine_tune(mct_params, model, tok, train, f, &text.lexicon);
    run.ft_en[mode] = mean_recall(score_all_pairs(tuned.params, model, tok, test_en)).mean_recall;
    run.ft_x[mode] = mean_recall(score_all_pairs(tuned.params, model, tok, test_x)).mean_recall;
  }
  return run;
}

Outcome criterion_transfer() {
  double zs_gain = 0, zs_en_drop = 0, ft_gain = 0, ft_en_drop = 0;
  std::string detail;
  const std::uint64_t seeds[] = {801, 802, 803};
  for (auto seed : seeds) {
    const TransferRun r = transfer_run(seed);
    zs_gain += (r.zs_x[1] - r.zs_x[0]) / 3;
    zs_en_drop += (r.zs_en[0] - r.zs_en[1]) / 3;
    ft_gain += (r.ft_x[1] - r.ft_x[0]) / 3;
    ft_en_drop += (r.ft_en[0] - r.ft_en[1]) / 3;
    detail += fmt("seed %llu: zs x %.1f->%.1f en %.1f->%.1f, ft x %.1f->%.1f en %.1f->%.1f; ",
                  static_cast<unsigned long long>(seed), r.zs_x[0], r.zs_x[1], r.zs_en[0], r.zs_en[1], r.ft_x[0],
                  r.ft_x[1], r.ft_en[0], r.ft_en[1]);
  }
  const bool pass = zs_gain >= 5 && ft_gain >= 5 && zs_en_drop <= 3 && ft_en_drop <= 3;
  return {pass, fmt("(a) zero-shot cipher gain %.2f, English drop %.2f; (b) MCT fine-tune cipher gain %.2f, English "
                    "drop %.2f (need gains >= 5, drops <= 3); ",
                    zs_gain, zs_en_drop, ft_gain, ft_en_drop) +
                    detail.substr(0, detail.size() - 2)};
}

// Runs every command twice with identical resolved configs into separate
// output roots and compares all produced files byte for byte.
Outcome criterion_determinism() {
  test::TempDir dir;
  test::write_file(dir.path() / "run.ini", R"(
[run]
seed = 909

[synth]
docs_per_language = 30
caption_count = 24
train_count = 12
test_count = 10

[model]
hidden = 16
feedforward = 32
heads = 2
max_text_len = 32

[pretrain]
steps = 20
batch_size = 6
warmup = 5
lr = 1e-3

[finetune]
steps = 10
batch_size = 4
mode = mct

[eval]
setting = ft_all

[ablate]
variants = base: ; no_mct: pretrain.mct=false
)");
  const std::string cfg = (dir.path() / "run.ini").string();
  std::vector<std::string> failures;
  std::size_t compared = 0;
  auto invoke = [&](const fs::path& root, std::vector<std::string> args) {
    args.insert(args.end(), {"--config", cfg, "--out", root.string()});
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) failures.push_back(args[0] + " exited " + std::to_string(code) + ": " + err.str());
  };
  auto run_dir = [](const fs::path& root, const std::string& command) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.path().filename().string().rfind(command + "-", 0) == 0) return e.path();
    }
    return fs::path();
  };
  const fs::path roots[2] = {dir.path() / "a", dir.path() / "b"};
  for (const auto& root : roots) {
    // Inputs are shared: both roots read the data produced under root a.
    invoke(root, {"synth"});
    const fs::path data = run_dir(roots[0], "synth");
    const std::string lex = "data.lexicon=" + (data / "lexicon.tsv").string();
    const std::vector<std::string> inputs = {"--set", "data.text=" + (data / "text.jsonl").string(), "--set",
                                             "data.images=" + (data / "images.jsonl").string(), "--set", lex};
    const std::string tests =
        "eval.test=en:" + (data / "test.en.jsonl").string() + ",x1:" + (data / "test.x1.jsonl").string();
    const std::string trains =
        "eval.train=en:" + (data / "train.en.jsonl").string() + ",x1:" + (data / "train.x1.jsonl").string();
    invoke(root, {"cs-preview", "--set", lex, "--set", "data.images=" + (data / "images.jsonl").string()});
    std::vector<std::string> pre = {"pretrain"};
    pre.insert(pre.end(), inputs.begin(), inputs.end());
    invoke(root, pre);
    const std::string ck = "data.checkpoint=" + (run_dir(roots[0], "pretrain") / "checkpoint.bin").string();
    invoke(root, {"finetune", "--set", ck, "--set", lex, "--set",
                  "data.train=" + (data / "train.en.jsonl").string()});
    invoke(root, {"eval", "--set", ck, "--set", lex, "--set", tests, "--set", trains});
    std::vector<std::string> ab = {"ablate", "--set", tests, "--set", trains};
    ab.insert(ab.end(), inputs.begin(), inputs.end());
    invoke(root, ab);
  }
  for (const auto& e : fs::recursive_directory_iterator(roots[0])) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), roots[0]);
    ++compared;
    if (!fs::exists(roots[1] / rel) || test::read_file(e.path()) != test::read_file(roots[1] / rel)) {
      failures.push_back("differs: " + rel.string());
    }
  }
  const bool pass = failures.empty() && compared >= 20;
  std::string detail = fmt("6 commands rerun; %zu output files compared byte for byte", compared);
  for (const auto& f : failures) detail += "; " + f;
  return {pass, detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "language sampler formula oracle", 1, criterion_sampler},
      {2, "masking statistics", 10, criterion_masking},
      {3, "gradient checks", 120, criterion_gradients},
      {4, "loss oracles", 0, criterion_loss_oracles},
      {5, "mean recall oracle", 0, criterion_recall},
      {6, "overfit sanity", 300, criterion_overfit},
      {7, "retrieval learns", 600, criterion_retrieval_learns},
      {8, "directional MCT transfer", 1800, criterion_transfer},
      {9, "determinism", 0, criterion_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.2fs", seconds);
    if (c.budget_seconds > 0) {
      timing += fmt(" (budget %.0fs)", c.budget_seconds);
      if (seconds >= c.budget_seconds) {
        o.pass = false;
        o.detail += "; over time budget";
      }
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << o.detail << " ["
              << timing << "]" << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << (criteria.size() - static_cast<std::size_t>(failed)) << "/"
            << criteria.size() << std::endl;
  return failed ? 1 : 0;
}
