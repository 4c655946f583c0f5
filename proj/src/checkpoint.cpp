// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace m3p {

namespace {

constexpr char kMagic[8] = {'M', '3', 'P', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},         {"n_heads", c.n_heads},
          {"hidden_dim", c.hidden_dim},     {"feedforward_dim", c.feedforward_dim},
          {"vocab_size", c.vocab_size},     {"n_language_ids", c.n_language_ids},
          {"max_text_len", c.max_text_len}, {"max_regions", c.max_regions},
          {"feature_dim", c.feature_dim},   {"n_classes", c.n_classes},
          {"dropout", c.dropout},           {"init_std", c.init_std},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.hidden_dim = j.at("hidden_dim");
  c.feedforward_dim = j.at("feedforward_dim");
  c.vocab_size = j.at("vocab_size");
  c.n_language_ids = j.at("n_language_ids");
  c.max_text_len = j.at("max_text_len");
  c.max_regions = j.at("max_regions");
  c.feature_dim = j.at("feature_dim");
  c.n_classes = j.at("n_classes");
  c.dropout = j.at("dropout");
  c.init_std = j.at("init_std");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = config_to_json(ck.config);
  std::vector<std::string> words(ck.tokenizer.pieces().begin() + Tokenizer::kNumSpecial, ck.tokenizer.pieces().end());
  header["vocabulary"] = words;
  header["languages"] = ck.tokenizer.languages();
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, m] : ck.params.tensors()) index.push_back({name, m->rows(), m->cols()});
  header["tensors"] = index;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : ck.params.tensors()) {
    out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not a checkpoint: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }

  ModelConfig config = config_from_json(header.at("config"));
  Tokenizer tokenizer(header.at("vocabulary").get<std::vector<std::string>>(),
                      header.at("languages").get<std::vector<std::string>>());
  EncoderParameters params = init_parameters(config);
  const auto& index = header.at("tensors");
  auto tensors = params.tensors();
  if (index.size() != tensors.size()) throw DataError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, m] = tensors[i];
    if (index[i][0].get<std::string>() != name || index[i][1].get<Eigen::Index>() != m->rows() ||
        index[i][2].get<Eigen::Index>() != m->cols()) {
      throw DataError("checkpoint tensor '" + name + "' does not match the model config");
    }
    in.read(reinterpret_cast<char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
  }
  if (!in) throw DataError("truncated checkpoint " + path.string());
  return {config, std::move(params), std::move(tokenizer)};
}

}  // namespace m3p
