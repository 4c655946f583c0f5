// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "m3p/cli.hpp"
#include "m3p/common.hpp"

namespace m3p::cli {

namespace {

struct Option {
  const char* key;
  const char* value;
};

// Defaults mirror the library's config structs.
const std::vector<Option>& option_table() {
  static const std::vector<Option> table = {
      {"run.seed", "0"},
      {"synth.vocab_size", "40"},
      {"synth.n_languages", "2"},
      {"synth.docs_per_language", "200"},
      {"synth.caption_count", "300"},
      {"synth.train_count", "200"},
      {"synth.test_count", "100"},
      {"synth.min_regions", "2"},
      {"synth.max_regions", "3"},
      {"synth.feature_dim", "16"},
      {"synth.n_classes", "8"},
      {"synth.noise", "0.1"},
      {"synth.min_doc_words", "4"},
      {"synth.max_doc_words", "12"},
      {"data.text", ""},
      {"data.images", ""},
      {"data.lexicon", ""},
      {"data.checkpoint", ""},
      {"data.train", ""},
      {"cs.replace_prob", "0.5"},
      {"cs.languages", ""},
      {"cs.count", "5"},
      {"model.layers", "2"},
      {"model.heads", "4"},
      {"model.hidden", "32"},
      {"model.feedforward", "64"},
      {"model.max_text_len", "128"},
      {"model.max_regions", "16"},
      {"model.n_classes", "8"},
      {"model.dropout", "0.1"},
      {"model.init_std", "0.02"},
      {"pretrain.lr", "1e-4"},
      {"pretrain.warmup", "100"},
      {"pretrain.beta1", "0.9"},
      {"pretrain.beta2", "0.98"},
      {"pretrain.batch_size", "32"},
      {"pretrain.steps", "1000"},
      {"pretrain.smoothing", "0.3"},
      {"pretrain.mix_ratio", "0.5"},
      {"pretrain.replace_prob", "0.5"},
      {"pretrain.negatives", "1"},
      {"pretrain.mlm_rate", "0.15"},
      {"pretrain.mrm_rate", "0.15"},
      {"pretrain.mrm_zero_prob", "0.9"},
      {"pretrain.xmlm", "true"},
      {"pretrain.mc_mlm", "true"},
      {"pretrain.mc_mrm", "true"},
      {"pretrain.mc_vlm", "true"},
      {"pretrain.mct", "true"},
      {"pretrain.mct_languages", ""},
      {"pretrain.language_ids", "source"},
      {"pretrain.schedule", "alternate"},
      {"finetune.lr", "5e-5"},
      {"finetune.warmup", "0"},
      {"finetune.beta1", "0.9"},
      {"finetune.beta2", "0.98"},
      {"finetune.negatives", "3"},
      {"finetune.batch_size", "8"},
      {"finetune.steps", "300"},
      {"finetune.mode", "normal"},
      {"finetune.replace_prob", "0.5"},
      {"finetune.mix_ratio", "0.5"},
      {"finetune.languages", ""},
      {"finetune.language_ids", "source"},
      {"eval.setting", "zero_shot"},
      {"eval.languages", ""},
      {"eval.test", ""},
      {"eval.train", ""},
      {"ablate.variants", ""},
  };
  return table;
}

const std::map<std::string, std::vector<std::string>>& command_sections() {
  static const std::map<std::string, std::vector<std::string>> sections = {
      {"synth", {"run", "synth"}},
      {"cs-preview", {"run", "data", "cs"}},
      {"pretrain", {"run", "data", "model", "pretrain"}},
      {"finetune", {"run", "data", "finetune"}},
      {"eval", {"run", "data", "finetune", "eval"}},
      {"ablate", {"run", "data", "model", "pretrain", "finetune", "eval", "ablate"}},
  };
  return sections;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string section_of(const std::string& key) {
  const auto dot = key.find('.');
  return dot == std::string::npos ? std::string() : key.substr(0, dot);
}

std::pair<std::string, std::string> split_assignment(const std::string& text, const std::string& origin) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(origin + ": expected key=value, got '" + text + "'");
  std::string key = trim(std::string_view(text).substr(0, eq));
  if (key.empty()) throw ConfigError(origin + ": empty key");
  return {key, trim(std::string_view(text).substr(eq + 1))};
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_ini(std::string_view text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty() || section.find('.') != std::string::npos) {
        throw ConfigError(where + ": invalid section name");
      }
      continue;
    }
    auto [key, value] = split_assignment(line, where);
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside a section");
    out.emplace_back(section + "." + key, value);
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"synth", "cs-preview", "pretrain", "finetune", "eval", "ablate"};
  return names;
}

RunConfig RunConfig::resolve(const std::string& command, const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
  const auto it = command_sections().find(command);
  if (it == command_sections().end()) throw ConfigError("unknown command '" + command + "'");
  const std::set<std::string> sections(it->second.begin(), it->second.end());

  RunConfig config;
  config.command_ = command;
  for (const auto& opt : option_table()) {
    if (sections.count(section_of(opt.key))) config.values_[opt.key] = opt.value;
  }
  auto apply = [&](const std::string& key, const std::string& value) {
    if (sections.count(section_of(key))) config.set(key, value);
  };
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    for (const auto& [key, value] : parse_ini(buffer.str(), file->string())) apply(key, value);
  }
  for (const auto& o : overrides) {
    const auto [key, value] = split_assignment(o, "--set");
    config.set(key, value);
  }
  if (seed) config.set("run.seed", std::to_string(*seed));
  return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "' for command " + command_);
  if (value.find('\n') != std::string::npos) throw ConfigError("config value for '" + key + "' spans lines");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config key '" + key + "' is not available to " + command_);
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::canonical() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : values_) {
    const std::string s = section_of(key);
    if (s != section) {
      if (!section.empty()) out << '\n';
      section = s;
      out << '[' << section << "]\n";
    }
    out << key.substr(section.size() + 1) << " = " << value << '\n';
  }
  return out.str();
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(command_ + "\n" + canonical())));
  return buf;
}

}  // namespace m3p::cli
