// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "m3p/checkpoint.hpp"
#include "m3p/cli.hpp"
#include "m3p/retrieval.hpp"

namespace m3p::cli {

namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::optional<fs::path> config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  fs::path out = "runs";
  bool force = false;
};

// Owns one run directory; refuses to reuse an existing one unless forced.
class RunDirectory {
 public:
  RunDirectory(const RunConfig& config, const Invocation& inv)
      : path_(inv.out / (config.command() + "-" + config.hash())) {
    if (fs::exists(path_)) {
      if (!inv.force) {
        throw ConfigError("run directory " + path_.string() + " exists; pass --force to overwrite");
      }
      fs::remove_all(path_);
    }
    fs::create_directories(path_);
    std::ofstream snapshot(path_ / "resolved.ini");
    snapshot << "# command: " << config.command() << "\n# config hash: " << config.hash() << "\n"
             << config.canonical();
    if (!snapshot) throw DataError("cannot write " + (path_ / "resolved.ini").string());
  }

  fs::path file(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

const std::string& required(const RunConfig& c, const std::string& key) {
  const std::string& v = c.get(key);
  if (v.empty()) throw ConfigError("config key '" + key + "' is required for " + c.command());
  return v;
}

LanguageIdPolicy parse_language_ids(const std::string& v) {
  if (v == "source") return LanguageIdPolicy::kKeepSource;
  if (v == "per_word") return LanguageIdPolicy::kPerWord;
  throw ConfigError("language_ids must be 'source' or 'per_word', got '" + v + "'");
}

// "lang:path,lang:path"
std::map<std::string, fs::path> parse_language_paths(const RunConfig& c, const std::string& key) {
  std::map<std::string, fs::path> out;
  for (const auto& item : c.get_list(key)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
      throw ConfigError(key + ": expected lang:path, got '" + item + "'");
    }
    out[item.substr(0, colon)] = item.substr(colon + 1);
  }
  return out;
}

SyntheticCorpusSpec synth_spec(const RunConfig& c) {
  SyntheticCorpusSpec spec;
  spec.vocab_size = c.get_int("synth.vocab_size");
  spec.n_languages = c.get_int("synth.n_languages");
  spec.docs_per_language = c.get_int("synth.docs_per_language");
  spec.caption_count = c.get_int("synth.caption_count");
  spec.min_regions = c.get_int("synth.min_regions");
  spec.max_regions = c.get_int("synth.max_regions");
  spec.feature_dim = c.get_int("synth.feature_dim");
  spec.n_classes = c.get_int("synth.n_classes");
  spec.class_feature_noise = c.get_double("synth.noise");
  spec.min_doc_words = c.get_int("synth.min_doc_words");
  spec.max_doc_words = c.get_int("synth.max_doc_words");
  spec.seed = c.get_u64("run.seed");
  spec.validate();
  return spec;
}

ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.n_layers = c.get_int("model.layers");
  m.n_heads = c.get_int("model.heads");
  m.hidden_dim = c.get_int("model.hidden");
  m.feedforward_dim = c.get_int("model.feedforward");
  m.max_text_len = c.get_int("model.max_text_len");
  m.max_regions = c.get_int("model.max_regions");
  m.n_classes = c.get_int("model.n_classes");
  m.dropout = c.get_double("model.dropout");
  m.init_std = c.get_double("model.init_std");
  m.seed = c.get_u64("run.seed");
  return m;
}

PretrainConfig pretrain_config(const RunConfig& c) {
  PretrainConfig p;
  p.learning_rate = c.get_double("pretrain.lr");
  p.warmup_steps = c.get_int("pretrain.warmup");
  p.beta1 = c.get_double("pretrain.beta1");
  p.beta2 = c.get_double("pretrain.beta2");
  p.batch_size = c.get_int("pretrain.batch_size");
  p.total_steps = c.get_int("pretrain.steps");
  p.language_smoothing = c.get_double("pretrain.smoothing");
  p.mix_ratio = c.get_double("pretrain.mix_ratio");
  p.replace_prob = c.get_double("pretrain.replace_prob");
  p.negatives_per_positive = c.get_int("pretrain.negatives");
  p.mlm_rate = c.get_double("pretrain.mlm_rate");
  p.mrm_rate = c.get_double("pretrain.mrm_rate");
  p.mrm_zero_prob = c.get_double("pretrain.mrm_zero_prob");
  p.tasks.xmlm = c.get_bool("pretrain.xmlm");
  p.tasks.mc_mlm = c.get_bool("pretrain.mc_mlm");
  p.tasks.mc_mrm = c.get_bool("pretrain.mc_mrm");
  p.tasks.mc_vlm = c.get_bool("pretrain.mc_vlm");
  p.mct = c.get_bool("pretrain.mct");
  p.mct_languages = c.get_list("pretrain.mct_languages");
  p.language_ids = parse_language_ids(c.get("pretrain.language_ids"));
  const std::string& schedule = c.get("pretrain.schedule");
  if (schedule == "alternate") {
    p.schedule = Schedule::kAlternate;
  } else if (schedule == "joint") {
    p.schedule = Schedule::kJoint;
  } else {
    throw ConfigError("pretrain.schedule must be 'alternate' or 'joint', got '" + schedule + "'");
  }
  p.seed = c.get_u64("run.seed");
  p.validate();
  return p;
}

FineTuneConfig finetune_config(const RunConfig& c) {
  FineTuneConfig f;
  f.learning_rate = c.get_double("finetune.lr");
  f.warmup_steps = c.get_int("finetune.warmup");
  f.beta1 = c.get_double("finetune.beta1");
  f.beta2 = c.get_double("finetune.beta2");
  f.negatives_per_positive = c.get_int("finetune.negatives");
  f.batch_size = c.get_int("finetune.batch_size");
  f.steps = c.get_int("finetune.steps");
  const std::string& mode = c.get("finetune.mode");
  if (mode == "normal") {
    f.mode = FineTuneMode::kNormal;
  } else if (mode == "mct") {
    f.mode = FineTuneMode::kMct;
  } else {
    throw ConfigError("finetune.mode must be 'normal' or 'mct', got '" + mode + "'");
  }
  f.replace_prob = c.get_double("finetune.replace_prob");
  f.mix_ratio = c.get_double("finetune.mix_ratio");
  f.mct_languages = c.get_list("finetune.languages");
  f.language_ids = parse_language_ids(c.get("finetune.language_ids"));
  f.seed = c.get_u64("run.seed");
  f.validate();
  return f;
}

std::optional<BilingualLexicon> optional_lexicon(const RunConfig& c) {
  const std::string& path = c.get("data.lexicon");
  if (path.empty()) return std::nullopt;
  return load_lexicon(path);
}

std::vector<CaptionedImage> read_image_files(const std::vector<std::string>& paths) {
  std::vector<CaptionedImage> out;
  for (const auto& p : paths) {
    auto part = read_image_corpus(p);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

nlohmann::json report_json(const MeanRecallReport& r) {
  return {{"i2t", {{"R@1", r.image_to_text[0]}, {"R@5", r.image_to_text[1]}, {"R@10", r.image_to_text[2]}}},
          {"t2i", {{"R@1", r.text_to_image[0]}, {"R@5", r.text_to_image[1]}, {"R@10", r.text_to_image[2]}}},
          {"mR", r.mean_recall}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

// ---------------------------------------------------------------- commands

int cmd_synth(const RunConfig& c, const Invocation& inv, std::ostream& out) {
  const SyntheticCorpusSpec spec = synth_spec(c);
  const int train_count = c.get_int("synth.train_count");
  const int test_count = c.get_int("synth.test_count");
  if (train_count < 2 || test_count < 2) throw ConfigError("synth.train_count and synth.test_count must be >= 2");
  RunDirectory dir(c, inv);

  const SyntheticTextCorpus text = generate_synthetic_multilingual_corpus(spec);
  write_text_corpus(text.documents, dir.file("text.jsonl"));
  save_lexicon(text.lexicon, dir.file("lexicon.tsv"));
  write_image_corpus(generate_synthetic_multimodal_corpus(spec, 0).images, dir.file("images.jsonl"));

  SyntheticCorpusSpec part = spec;
  part.caption_count = train_count;
  const auto train = generate_synthetic_multimodal_corpus(part, 1).images;
  part.caption_count = test_count;
  const auto test = generate_synthetic_multimodal_corpus(part, 2).images;
  for (const auto& lang : text.vocabulary.languages) {
    auto translate = [&](std::vector<CaptionedImage> images) {
      if (lang == kEnglish) return images;
      for (auto& im : images) {
        im.caption = translate_words(im.caption, text.lexicon, lang);
        im.language = lang;
      }
      return images;
    };
    write_image_corpus(translate(train), dir.file("train." + lang + ".jsonl"));
    write_image_corpus(translate(test), dir.file("test." + lang + ".jsonl"));
  }
  out << "wrote " << text.documents.size() << " documents, " << spec.caption_count << " pre-training images, "
      << train_count << " train / " << test_count << " test images per language to " << dir.path().string() << '\n';
  return kOk;
}

int cmd_cs_preview(const RunConfig& c, const Invocation& inv, std::ostream& out) {
  const BilingualLexicon lexicon = load_lexicon(required(c, "data.lexicon"));
  const auto images = read_image_corpus(required(c, "data.images"));
  if (images.empty()) throw DataError("image corpus is empty");
  const int count = c.get_int("cs.count");
  if (count < 1) throw ConfigError("cs.count must be >= 1");
  CodeSwitchPolicy policy;
  policy.lexicon = &lexicon;
  policy.replace_prob = c.get_double("cs.replace_prob");
  policy.languages = c.get_list("cs.languages");
  if (policy.languages.empty()) policy.languages.assign(lexicon.languages().begin(), lexicon.languages().end());
  policy.validate();
  RunDirectory dir(c, inv);

  // Replaced words are marked as [word/lang].
  Rng rng(derive_seed(c.get_u64("run.seed"), 21));
  std::ostringstream text;
  std::size_t replaced_total = 0;
  for (int i = 0; i < count; ++i) {
    const auto& image = images[uniform_index(rng, images.size())];
    policy.source_language = image.language;
    const SwitchedCaption cs = code_switch_caption(image.caption, policy, rng);
    std::ostringstream line;
    std::size_t replaced = 0;
    for (std::size_t w = 0; w < cs.words.size(); ++w) {
      if (w) line << ' ';
      if (cs.languages[w] != image.language) {
        line << '[' << cs.words[w] << '/' << cs.languages[w] << ']';
        ++replaced;
      } else {
        line << cs.words[w];
      }
    }
    replaced_total += replaced;
    text << "original: " << join_words(image.caption) << '\n'
         << "switched: " << line.str() << '\n'
         << "replaced: " << replaced << '\n';
  }
  text << "total replaced: " << replaced_total << '\n';
  write_text(dir.file("preview.txt"), text.str());
  out << text.str();
  return kOk;
}

struct PretrainOutputs {
  Checkpoint checkpoint;
  std::vector<LossReport> trace;
};

PretrainOutputs run_pretrain(const RunConfig& c, const std::optional<BilingualLexicon>& lexicon) {
  const PretrainConfig pc = pretrain_config(c);
  PretrainCorpora corpora;
  if (!c.get("data.text").empty()) corpora.documents = read_text_corpus(c.get("data.text"));
  if (!c.get("data.images").empty()) corpora.images = read_image_corpus(c.get("data.images"));
  Tokenizer tokenizer = Tokenizer::from_corpora(corpora.documents, corpora.images, lexicon ? &*lexicon : nullptr);
  ModelConfig model = model_config(c);
  model.vocab_size = tokenizer.vocab_size();
  model.n_language_ids = tokenizer.n_languages();
  if (!corpora.images.empty() && !corpora.images.front().regions.empty()) {
    model.feature_dim = static_cast<int>(corpora.images.front().regions.front().feature.size());
  }
  model.validate();
  PretrainResult result = pretrain(corpora, lexicon ? &*lexicon : nullptr, tokenizer, model, pc);
  return {{model, std::move(result.params), std::move(tokenizer)}, std::move(result.trace)};
}

int cmd_pretrain(const RunConfig& c, const Invocation& inv, std::ostream& out) {
  const auto lexicon = optional_lexicon(c);
  RunDirectory dir(c, inv);
  const PretrainOutputs result = run_pretrain(c, lexicon);
  write_loss_trace(result.trace, dir.file("loss_trace.jsonl"));
  save_checkpoint(result.checkpoint, dir.file("checkpoint.bin"));
  out << "pre-trained " << result.trace.size() << " steps; final loss "
      << (result.trace.empty() ? 0.0 : result.trace.back().total) << "; outputs in " << dir.path().string() << '\n';
  return kOk;
}

int cmd_finetune(const RunConfig& c, const Invocation& inv, std::ostream& out) {
  const FineTuneConfig fc = finetune_config(c);
  const Checkpoint base = load_checkpoint(required(c, "data.checkpoint"));
  const auto lexicon = optional_lexicon(c);
  const auto train_files = c.get_list("data.train");
  if (train_files.empty()) throw ConfigError("config key 'data.train' is required for finetune");
  const RetrievalSplit train = make_retrieval_split(read_image_files(train_files));
  RunDirectory dir(c, inv);
  const FineTuneResult tuned =
      fine_tune(base.params, base.config, base.tokenizer, train, fc, lexicon ? &*lexicon : nullptr);
  std::ofstream trace(dir.file("finetune_trace.jsonl"));
  for (std::size_t i = 0; i < tuned.losses.size(); ++i) {
    trace << nlohmann::json{{"step", i}, {"loss", tuned.losses[i]}}.dump() << '\n';
  }
  save_checkpoint({base.config, tuned.params, base.tokenizer}, dir.file("checkpoint.bin"));
  out << "fine-tuned " << tuned.losses.size() << " steps; final loss "
      << (tuned.losses.empty() ? 0.0 : tuned.losses.back()) << "; outputs in " << dir.path().string() << '\n';
  return kOk;
}

std::map<std::string, LanguageData> load_datasets(const RunConfig& c) {
  std::map<std::string, LanguageData> data;
  for (const auto& [lang, path] : parse_language_paths(c, "eval.test")) {
    data[lang].test = make_retrieval_split(read_image_corpus(path));
  }
  for (const auto& [lang, path] : parse_language_paths(c, "eval.train")) {
    if (!data.count(lang)) throw ConfigError("eval.train: language '" + lang + "' has no test file");
    data[lang].train = make_retrieval_split(read_image_corpus(path));
  }
  if (data.empty()) throw ConfigError("config key 'eval.test' is required");
  return data;
}

nlohmann::json setting_json(const SettingResult& r, const RunConfig& c) {
  nlohmann::json langs = nlohmann::json::object();
  for (const auto& [lang, report] : r.reports) langs[lang] = report_json(report);
  return {{"setting", to_string(r.setting)},
          {"seed", c.get_u64("run.seed")},
          {"config_hash", c.hash()},
          {"finetune_runs", r.finetune_runs},
          {"languages", langs}};
}

int cmd_eval(const RunConfig& c, const Invocation& inv, std::ostream& out) {
  const FineTuneConfig fc = finetune_config(c);
  const RetrievalSetting setting = parse_setting(c.get("eval.setting"));
  const Checkpoint ck = load_checkpoint(required(c, "data.checkpoint"));
  const auto lexicon = optional_lexicon(c);
  const auto datasets = load_datasets(c);
  RunDirectory dir(c, inv);
  const SettingResult result = run_setting(ck.params, ck.config, ck.tokenizer, datasets, setting, fc,
                                           lexicon ? &*lexicon : nullptr, c.get_list("eval.languages"));
  write_text(dir.file("report.json"), setting_json(result, c).dump(2) + "\n");
  for (const auto& [lang, report] : result.reports) {
    out << to_string(setting) << ' ' << lang << " mR " << std::fixed << std::setprecision(2) << report.mean_recall
        << '\n';
  }
  return kOk;
}

struct Variant {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// "name: key=value key=value; name2: ..."
std::vector<Variant> parse_variants(const std::string& text) {
  std::vector<Variant> variants;
  std::stringstream ss(text);
  std::string chunk;
  while (std::getline(ss, chunk, ';')) {
    const auto colon = chunk.find(':');
    std::stringstream head(chunk.substr(0, colon));
    Variant v;
    head >> v.name;
    if (v.name.empty()) continue;
    if (colon != std::string::npos) {
      std::stringstream body(chunk.substr(colon + 1));
      std::string assignment;
      while (body >> assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw ConfigError("ablate.variants: expected key=value, got '" + assignment + "'");
        }
        v.overrides.emplace_back(assignment.substr(0, eq), assignment.substr(eq + 1));
      }
    }
    variants.push_back(std::move(v));
  }
  if (variants.empty()) throw ConfigError("ablate.variants declares no variants");
  std::set<std::string> names;
  for (const auto& v : variants) {
    if (!names.insert(v.name).second) throw ConfigError("ablate.variants: duplicate variant '" + v.name + "'");
  }
  return variants;
}

int cmd_ablate(const RunConfig& c, const Invocation& inv, std::ostream& out) {
  const auto variants = parse_variants(c.get("ablate.variants"));
  const auto lexicon = optional_lexicon(c);
  const auto datasets = load_datasets(c);
  std::vector<RunConfig> resolved;
  for (const auto& v : variants) {
    RunConfig vc = c;
    for (const auto& [key, value] : v.overrides) {
      if (key.rfind("ablate.", 0) == 0) throw ConfigError("ablate.variants cannot override ablate keys");
      vc.set(key, value);
    }
    pretrain_config(vc);
    finetune_config(vc);
    parse_setting(vc.get("eval.setting"));
    resolved.push_back(std::move(vc));
  }
  RunDirectory dir(c, inv);

  std::set<std::string> columns;
  std::vector<SettingResult> results;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const RunConfig& vc = resolved[i];
    const fs::path vdir = dir.file(variants[i].name);
    fs::create_directories(vdir);
    write_text(vdir / "resolved.ini", vc.canonical());
    const auto vlex = optional_lexicon(vc);
    const PretrainOutputs pre = run_pretrain(vc, vlex);
    write_loss_trace(pre.trace, vdir / "loss_trace.jsonl");
    const SettingResult r =
        run_setting(pre.checkpoint.params, pre.checkpoint.config, pre.checkpoint.tokenizer, datasets,
                    parse_setting(vc.get("eval.setting")), finetune_config(vc), vlex ? &*vlex : nullptr,
                    vc.get_list("eval.languages"));
    write_text(vdir / "report.json", setting_json(r, vc).dump(2) + "\n");
    for (const auto& [lang, report] : r.reports) columns.insert(lang);
    results.push_back(r);
  }

  std::ostringstream table;
  table << "variant\tconfig_hash";
  for (const auto& lang : columns) table << '\t' << lang;
  table << '\n';
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    table << variants[i].name << '\t' << resolved[i].hash();
    nlohmann::json row{{"variant", variants[i].name}, {"config_hash", resolved[i].hash()}};
    for (const auto& lang : columns) {
      const auto it = results[i].reports.find(lang);
      if (it == results[i].reports.end()) {
        table << "\t-";
        row["mR"][lang] = nullptr;
      } else {
        table << '\t' << std::fixed << std::setprecision(2) << it->second.mean_recall;
        row["mR"][lang] = it->second.mean_recall;
      }
    }
    table << '\n';
    rows.push_back(row);
  }
  write_text(dir.file("table.tsv"), table.str());
  write_text(dir.file("table.json"), rows.dump(2) + "\n");
  out << table.str();
  return kOk;
}

int dispatch(const std::string& command, const Invocation& inv, std::ostream& out) {
  const RunConfig config = RunConfig::resolve(command, inv.config_file, inv.overrides, inv.seed);
  if (command == "synth") return cmd_synth(config, inv, out);
  if (command == "cs-preview") return cmd_cs_preview(config, inv, out);
  if (command == "pretrain") return cmd_pretrain(config, inv, out);
  if (command == "finetune") return cmd_finetune(config, inv, out);
  if (command == "eval") return cmd_eval(config, inv, out);
  return cmd_ablate(config, inv, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilingual multimodal pre-training toolkit", "m3p"};
  app.require_subcommand(1);
  Invocation inv;
  std::string config_file;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  std::map<std::string, CLI::App*> subs;
  static const std::map<std::string, std::string> descriptions = {
      {"synth", "generate synthetic multilingual and multimodal corpora"},
      {"cs-preview", "print code-switched captions with replacements marked"},
      {"pretrain", "pre-train the encoder and write a checkpoint and loss trace"},
      {"finetune", "fine-tune a checkpoint for retrieval"},
      {"eval", "report retrieval recall for one evaluation setting"},
      {"ablate", "run pre-training variants and tabulate recall"},
  };
  for (const auto& name : command_names()) {
    CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
    sub->add_option("--config", config_file, "INI config file");
    sub->add_option("--set", inv.overrides, "override section.key=value (repeatable)");
    sub->add_option("--seed", seed, "run seed (overrides run.seed)");
    sub->add_option("--out", out_dir, "parent directory of run directories");
    sub->add_flag("--force", inv.force, "overwrite an existing run directory");
    subs[name] = sub;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kUsage;
  }
  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) {
      command = name;
      if (sub->count("--config")) inv.config_file = config_file;
      if (sub->count("--seed")) inv.seed = seed;
    }
  }
  inv.out = out_dir;
  try {
    return dispatch(command, inv, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace m3p::cli
