// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "fixtures.hpp"
#include "m3p/checkpoint.hpp"
#include "test_util.hpp"

using namespace m3p;

namespace {

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden_dim, f = c.feedforward_dim;
  const std::size_t per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  return c.vocab_size * d + c.max_text_len * d + c.n_language_ids * d + (c.feature_dim * d + d) + (5 * d + d) +
         c.n_layers * per_layer + 2 * d + (d * c.vocab_size + c.vocab_size) + (d * c.feature_dim + c.feature_dim) +
         (d * c.n_classes + c.n_classes) + (d + 1);
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  ModelConfig c = test::toy_config();
  CHECK(init_parameters(c).parameter_count() == expected_parameter_count(c));
  c.n_layers = 3;
  c.hidden_dim = 24;
  c.n_heads = 3;
  CHECK(init_parameters(c).parameter_count() == expected_parameter_count(c));
}

TEST_CASE("initialization is deterministic and seeded") {
  ModelConfig c = test::toy_config();
  const auto a = init_parameters(c);
  const auto b = init_parameters(c);
  CHECK(a.token_embedding == b.token_embedding);
  CHECK(a.layers[1].ff_out == b.layers[1].ff_out);
  CHECK(a.layers[0].ln1_gain.isOnes());
  CHECK(a.layers[0].query_bias.isZero());
  c.seed = 1;
  CHECK(init_parameters(c).token_embedding != a.token_embedding);
}

TEST_CASE("config validation") {
  ModelConfig c = test::toy_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::toy_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("padding does not change real positions") {
  const ModelConfig c = test::toy_config();
  const auto params = init_parameters(c);
  Rng rng(1);
  const TextStream shorter = test::random_text(c, rng, 4, 4);
  const TextStream longer = test::random_text(c, rng, 9, 9);
  const RegionSet regions = test::random_regions(c, rng, 2, 2);

  const TextBatch alone = pad_text_batch({shorter});
  const TextBatch padded = pad_text_batch({shorter, longer});
  REQUIRE(padded.token_ids[0].size() == 9);
  const std::vector<RegionSet> r1 = {regions};
  const std::vector<RegionSet> r2 = {regions, regions};
  const auto a = encode(params, c, alone, &r1);
  const auto b = encode(params, c, padded, &r2);
  // Real text rows, IMG and regions agree regardless of padding.
  for (int t = 0; t < 4; ++t) CHECK((a.hidden[0].row(t) - b.hidden[0].row(t)).norm() < 1e-12);
  for (int k = 0; k <= 2; ++k) {
    CHECK((a.hidden[0].row(a.layouts[0].img_position() + k) - b.hidden[0].row(b.layouts[0].img_position() + k))
              .norm() < 1e-12);
  }
}

TEST_CASE("encoder layout and output shapes") {
  const ModelConfig c = test::toy_config();
  const auto params = init_parameters(c);
  Rng rng(2);
  const TextStream t = test::random_text(c, rng, 5, 5);
  const RegionSet r = test::random_regions(c, rng, 3, 3);
  const EncoderInput input{t.token_ids, t.language_ids, {}, &r.features, &r.spatial};
  const auto out = encode(params, c, std::span<const EncoderInput>(&input, 1));
  CHECK(out.layouts[0].total() == 9);
  CHECK(out.hidden[0].rows() == 9);
  CHECK(out.hidden[0].cols() == c.hidden_dim);
  CHECK(out.cls().rows() == 1);
  const int positions[] = {1, 2};
  CHECK(mlm_logits(params, out, 0, positions).cols() == c.vocab_size);
  const int regions[] = {0, 2};
  const auto heads = mrm_outputs(params, out, 0, regions);
  CHECK(heads.regression.cols() == c.feature_dim);
  CHECK(heads.class_scores.cols() == c.n_classes);

  const EncoderInput text_only{t.token_ids, t.language_ids, {}, nullptr, nullptr};
  CHECK(encode(params, c, std::span<const EncoderInput>(&text_only, 1)).layouts[0].total() == 5);
}

TEST_CASE("encoder rejects malformed inputs") {
  const ModelConfig c = test::toy_config();
  const auto params = init_parameters(c);
  Rng rng(3);
  const TextStream too_long = test::random_text(c, rng, c.max_text_len + 1, c.max_text_len + 1);
  const EncoderInput a{too_long.token_ids, too_long.language_ids, {}, nullptr, nullptr};
  CHECK_THROWS_AS(encode(params, c, std::span<const EncoderInput>(&a, 1)), ConfigError);

  TextStream bad = test::random_text(c, rng, 4, 4);
  bad.token_ids[1] = c.vocab_size;
  const EncoderInput b{bad.token_ids, bad.language_ids, {}, nullptr, nullptr};
  CHECK_THROWS_AS(encode(params, c, std::span<const EncoderInput>(&b, 1)), ConfigError);

  const TextStream ok = test::random_text(c, rng, 4, 4);
  const RegionSet many = test::random_regions(c, rng, c.max_regions + 1, c.max_regions + 1);
  const EncoderInput d{ok.token_ids, ok.language_ids, {}, &many.features, &many.spatial};
  CHECK_THROWS_AS(encode(params, c, std::span<const EncoderInput>(&d, 1)), ConfigError);
}

TEST_CASE("dropout is active only with an rng") {
  const ModelConfig c = test::toy_config();
  const auto params = init_parameters(c);
  Rng rng(4);
  const TextBatch batch = pad_text_batch({test::random_text(c, rng, 5, 5)});
  const auto a = encode(params, c, batch);
  const auto b = encode(params, c, batch);
  CHECK(a.hidden[0] == b.hidden[0]);
  Rng drop(5);
  CHECK(encode(params, c, batch, nullptr, &drop).hidden[0] != a.hidden[0]);
}

TEST_CASE("gradient checks for the four losses") {
  ModelConfig c = test::toy_config();
  const Tokenizer tok = test::toy_tokenizer();
  const auto params = init_parameters(c);
  Rng data(6), pick(7);
  const auto xmlm = test::toy_xmlm_batch(c, tok, data);
  const auto mc_mlm = test::toy_mc_mlm_batch(c, tok, data);
  const auto mrm = test::toy_mrm_batch(c, data);
  const auto vlm = test::toy_vlm_batch(c, data);
  const std::vector<std::pair<const char*, test::LossFn>> losses = {
      {"xmlm", [&](const EncoderParameters& p, EncoderParameters* g) { return xmlm_loss(p, c, xmlm, g); }},
      {"mc_mlm", [&](const EncoderParameters& p, EncoderParameters* g) { return mc_mlm_loss(p, c, mc_mlm, g); }},
      {"mc_mrm", [&](const EncoderParameters& p, EncoderParameters* g) { return mc_mrm_loss(p, c, mrm, g); }},
      {"mc_vlm", [&](const EncoderParameters& p, EncoderParameters* g) { return mc_vlm_loss(p, c, vlm, g); }},
  };
  for (const auto& [name, fn] : losses) {
    const auto r = test::gradient_check(params, fn, 0.01, pick);
    INFO(name << " worst " << r.worst_entry << " rel " << r.max_relative_error);
    CHECK(r.failures == 0);
    CHECK(r.checked > 40);
  }
}

TEST_CASE("gradients accumulate across calls") {
  const ModelConfig c = test::toy_config();
  const auto params = init_parameters(c);
  Rng data(8);
  const auto vlm = test::toy_vlm_batch(c, data);
  EncoderParameters once = params.zeros_like(), twice = params.zeros_like();
  mc_vlm_loss(params, c, vlm, &once);
  mc_vlm_loss(params, c, vlm, &twice);
  mc_vlm_loss(params, c, vlm, &twice);
  CHECK((twice.vlm_weight - 2 * once.vlm_weight).norm() < 1e-12);
  CHECK((twice.token_embedding - 2 * once.token_embedding).norm() < 1e-12);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const ModelConfig c = test::toy_config();
  const Tokenizer tok = test::toy_tokenizer();
  const Checkpoint ck{c, init_parameters(c), tok};
  test::TempDir dir;
  save_checkpoint(ck, dir.path() / "ck.bin");
  const Checkpoint back = load_checkpoint(dir.path() / "ck.bin");
  CHECK(back.config == c);
  CHECK(back.tokenizer == tok);
  const auto a = ck.params.tensors();
  const auto b = back.params.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);

  test::write_file(dir.path() / "junk.bin", "not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "junk.bin"), DataError);
  const std::string bytes = test::read_file(dir.path() / "ck.bin");
  test::write_file(dir.path() / "short.bin", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "short.bin"), DataError);
}
