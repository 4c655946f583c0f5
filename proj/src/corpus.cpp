// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace m3p {

using nlohmann::json;

void validate_region(const RegionFeature& region, std::size_t feature_dim) {
  const Box& b = region.box;
  const ImageSize& s = region.image_size;
  if (!(s.width > 0 && s.height > 0)) throw DataError("region image size must be positive");
  if (!(0 <= b.x1 && b.x1 < b.x2 && b.x2 <= s.width && 0 <= b.y1 && b.y1 < b.y2 && b.y2 <= s.height)) {
    throw DataError("region box outside image bounds");
  }
  if (feature_dim != 0 && region.feature.size() != feature_dim) {
    throw DataError("region feature has dimension " + std::to_string(region.feature.size()) +
                    ", expected " + std::to_string(feature_dim));
  }
  if (region.class_id < 0) throw DataError("negative region class id");
}

// ---------------------------------------------------------------- lexicon

BilingualLexicon::BilingualLexicon(const BilingualLexicon& other)
    : entries_(other.entries_), languages_(other.languages_), lookups_(other.lookups_.load()) {}

BilingualLexicon& BilingualLexicon::operator=(const BilingualLexicon& other) {
  if (this != &other) {
    entries_ = other.entries_;
    languages_ = other.languages_;
    lookups_ = other.lookups_.load();
  }
  return *this;
}

void BilingualLexicon::add(const std::string& english_word, const std::string& language,
                           const std::string& translation) {
  if (english_word.empty() || language.empty() || translation.empty()) {
    throw DataError("lexicon entries must be non-empty strings");
  }
  entries_[{english_word, language}].push_back(translation);
  languages_.insert(language);
}

const std::vector<std::string>* BilingualLexicon::translations(const std::string& english_word,
                                                               const std::string& language) const {
  ++lookups_;
  auto it = entries_.find({english_word, language});
  return it == entries_.end() ? nullptr : &it->second;
}

BilingualLexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon " + path.string());
  BilingualLexicon lexicon;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed lexicon row (expected english_word<TAB>language<TAB>translation)");
    }
    lexicon.add(fields[0], fields[1], fields[2]);
  }
  if (lexicon.empty()) throw DataError("empty lexicon");
  return lexicon;
}

void save_lexicon(const BilingualLexicon& lexicon, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write lexicon " + path.string());
  for (const auto& [key, translations] : lexicon.entries()) {
    for (const auto& t : translations) out << key.first << '\t' << key.second << '\t' << t << '\n';
  }
}

std::vector<std::string> translate_words(const std::vector<std::string>& words,
                                         const BilingualLexicon& lexicon,
                                         const std::string& language) {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    const auto* t = lexicon.translations(w, language);
    out.push_back(t ? t->front() : w);
  }
  return out;
}

// ---------------------------------------------------------------- synthetic data

void SyntheticCorpusSpec::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("corpus spec: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(n_languages, "n_languages");
  positive(docs_per_language, "docs_per_language");
  positive(caption_count, "caption_count");
  positive(min_regions, "min_regions");
  positive(max_regions, "max_regions");
  positive(feature_dim, "feature_dim");
  positive(n_classes, "n_classes");
  positive(min_doc_words, "min_doc_words");
  if (min_regions > max_regions) throw ConfigError("corpus spec: min_regions > max_regions");
  if (min_doc_words > max_doc_words) throw ConfigError("corpus spec: min_doc_words > max_doc_words");
  if (vocab_size <= n_classes) throw ConfigError("corpus spec: vocab_size must exceed n_classes");
  if (!std::isfinite(class_feature_noise) || class_feature_noise < 0) {
    throw ConfigError("corpus spec: class_feature_noise must be finite and >= 0");
  }
}

namespace {

enum Stream : std::uint64_t { kVocabStream = 1, kGrammarStream = 2, kTextStream = 3, kImageStream = 100 };

std::string cipher_code(int index) { return "x" + std::to_string(index); }

// Successor table of the bigram grammar shared by all languages.
std::vector<std::vector<int>> make_grammar(const SyntheticCorpusSpec& spec) {
  Rng rng(derive_seed(spec.seed, kGrammarStream));
  std::vector<std::vector<int>> successors(spec.vocab_size);
  for (auto& s : successors) {
    for (int k = 0; k < 3; ++k) s.push_back(static_cast<int>(uniform_index(rng, spec.vocab_size)));
  }
  return successors;
}

}  // namespace

BilingualLexicon SyntheticVocabulary::lexicon() const {
  BilingualLexicon lex;
  for (std::size_t l = 1; l < languages.size(); ++l) {
    for (std::size_t s = 0; s < words[0].size(); ++s) lex.add(words[0][s], languages[l], words[l][s]);
  }
  return lex;
}

SyntheticVocabulary make_synthetic_vocabulary(const SyntheticCorpusSpec& spec) {
  spec.validate();
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  Rng rng(derive_seed(spec.seed, kVocabStream));

  SyntheticVocabulary vocab;
  vocab.n_classes = spec.n_classes;
  std::unordered_set<std::string> taken;
  for (int l = 0; l < spec.n_languages; ++l) {
    vocab.languages.push_back(l == 0 ? kEnglish : cipher_code(l));
    // Each language draws from its own syllable inventory; the global set
    // keeps namespaces disjoint.
    std::vector<std::string> syllables;
    for (int k = 0; k < 12; ++k) {
      std::string syl;
      syl += consonants[uniform_index(rng, consonants.size())];
      syl += vowels[uniform_index(rng, vowels.size())];
      if (l > 0) syl += consonants[uniform_index(rng, consonants.size())];
      syllables.push_back(syl);
    }
    std::vector<std::string> words;
    int length = 2;
    int attempts = 0;
    while (static_cast<int>(words.size()) < spec.vocab_size) {
      std::string w;
      for (int k = 0; k < length; ++k) w += syllables[uniform_index(rng, syllables.size())];
      if (taken.insert(w).second) {
        words.push_back(w);
      } else if (++attempts > 64) {
        ++length;
        attempts = 0;
      }
    }
    vocab.words.push_back(std::move(words));
  }
  return vocab;
}

SyntheticTextCorpus generate_synthetic_multilingual_corpus(const SyntheticCorpusSpec& spec) {
  SyntheticTextCorpus corpus;
  corpus.vocabulary = make_synthetic_vocabulary(spec);
  corpus.lexicon = corpus.vocabulary.lexicon();
  const auto successors = make_grammar(spec);

  for (int l = 0; l < spec.n_languages; ++l) {
    Rng rng(derive_seed(spec.seed, kTextStream + 1000 * static_cast<std::uint64_t>(l)));
    std::uniform_int_distribution<int> length(spec.min_doc_words, spec.max_doc_words);
    for (int d = 0; d < spec.docs_per_language; ++d) {
      MonolingualDocument doc;
      doc.language = corpus.vocabulary.languages[l];
      const int n = length(rng);
      int stem = static_cast<int>(uniform_index(rng, spec.vocab_size));
      for (int i = 0; i < n; ++i) {
        doc.text.push_back(corpus.vocabulary.word(l, stem));
        stem = uniform01(rng) < 0.8 ? successors[stem][uniform_index(rng, 3)]
                                    : static_cast<int>(uniform_index(rng, spec.vocab_size));
      }
      corpus.documents.push_back(std::move(doc));
    }
  }
  return corpus;
}

SyntheticImageCorpus generate_synthetic_multimodal_corpus(const SyntheticCorpusSpec& spec,
                                                          std::uint64_t stream) {
  SyntheticImageCorpus corpus;
  corpus.vocabulary = make_synthetic_vocabulary(spec);

  Rng proto_rng(derive_seed(spec.seed, kImageStream));
  std::normal_distribution<double> gauss(0.0, 1.0);
  corpus.prototypes.resize(spec.n_classes, spec.feature_dim);
  for (int k = 0; k < spec.n_classes; ++k) {
    for (int j = 0; j < spec.feature_dim; ++j) corpus.prototypes(k, j) = gauss(proto_rng);
  }

  Rng rng(derive_seed(spec.seed, kImageStream + 1 + stream));
  std::uniform_int_distribution<int> n_regions(spec.min_regions, spec.max_regions);
  std::uniform_int_distribution<int> image_side(200, 800);
  const int n_fillers = spec.vocab_size - spec.n_classes;
  for (int c = 0; c < spec.caption_count; ++c) {
    CaptionedImage image;
    image.language = kEnglish;
    const double width = image_side(rng);
    const double height = image_side(rng);
    const int n = n_regions(rng);
    for (int r = 0; r < n; ++r) {
      RegionFeature region;
      region.class_id = static_cast<int>(uniform_index(rng, spec.n_classes));
      region.class_confidence = 1.0;
      region.image_size = {width, height};
      const double x1 = std::uniform_int_distribution<int>(0, static_cast<int>(width) - 1)(rng);
      const double x2 = std::uniform_int_distribution<int>(static_cast<int>(x1) + 1, static_cast<int>(width))(rng);
      const double y1 = std::uniform_int_distribution<int>(0, static_cast<int>(height) - 1)(rng);
      const double y2 = std::uniform_int_distribution<int>(static_cast<int>(y1) + 1, static_cast<int>(height))(rng);
      region.box = {x1, y1, x2, y2};
      region.feature.resize(spec.feature_dim);
      for (int j = 0; j < spec.feature_dim; ++j) {
        const double noise = spec.class_feature_noise > 0 ? spec.class_feature_noise * gauss(rng) : 0.0;
        region.feature[j] = corpus.prototypes(region.class_id, j) + noise;
      }
      // One modifier word then the class noun per region.
      const int filler = spec.n_classes + static_cast<int>(uniform_index(rng, n_fillers));
      image.caption.push_back(corpus.vocabulary.word(0, filler));
      image.caption.push_back(corpus.vocabulary.word(0, region.class_id));
      image.regions.push_back(std::move(region));
    }
    corpus.images.push_back(std::move(image));
  }
  return corpus;
}

// ---------------------------------------------------------------- serialization

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

template <class F>
void for_each_record(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

void write_text_corpus(const std::vector<MonolingualDocument>& docs, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& d : docs) out << json{{"text", join_words(d.text)}, {"language", d.language}}.dump() << '\n';
}

std::vector<MonolingualDocument> read_text_corpus(const std::filesystem::path& path) {
  std::vector<MonolingualDocument> docs;
  for_each_record(path, [&](const json& j) {
    MonolingualDocument d{split_words(j.at("text").get<std::string>()), j.at("language").get<std::string>()};
    if (d.text.empty()) throw DataError("empty document text");
    docs.push_back(std::move(d));
  });
  return docs;
}

void write_image_corpus(const std::vector<CaptionedImage>& images, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& img : images) {
    json regions = json::array();
    for (const auto& r : img.regions) {
      regions.push_back({{"feature", r.feature},
                         {"box", {r.box.x1, r.box.y1, r.box.x2, r.box.y2}},
                         {"image_size", {r.image_size.width, r.image_size.height}},
                         {"class_id", r.class_id},
                         {"confidence", r.class_confidence}});
    }
    json rec{{"caption", join_words(img.caption)}, {"language", img.language}, {"regions", regions}};
    if (!img.image_id.empty()) rec["image_id"] = img.image_id;
    out << rec.dump() << '\n';
  }
}

std::vector<CaptionedImage> read_image_corpus(const std::filesystem::path& path) {
  std::vector<CaptionedImage> images;
  for_each_record(path, [&](const json& j) {
    CaptionedImage img;
    img.caption = split_words(j.at("caption").get<std::string>());
    img.language = j.at("language").get<std::string>();
    if (j.contains("image_id")) img.image_id = j.at("image_id").get<std::string>();
    if (img.caption.empty()) throw DataError("empty caption");
    for (const auto& r : j.at("regions")) {
      RegionFeature region;
      region.feature = r.at("feature").get<std::vector<double>>();
      const auto box = r.at("box").get<std::vector<double>>();
      const auto size = r.at("image_size").get<std::vector<double>>();
      if (box.size() != 4 || size.size() != 2) throw DataError("box needs 4 values and image_size 2");
      region.box = {box[0], box[1], box[2], box[3]};
      region.image_size = {size[0], size[1]};
      region.class_id = r.at("class_id").get<int>();
      region.class_confidence = r.value("confidence", 1.0);
      validate_region(region, img.regions.empty() ? 0 : img.regions.front().feature.size());
      img.regions.push_back(std::move(region));
    }
    if (img.regions.empty()) throw DataError("image record without regions");
    images.push_back(std::move(img));
  });
  return images;
}

}  // namespace m3p
