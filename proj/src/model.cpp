// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

#include "m3p/model.hpp"

#include <cmath>
#include <limits>

namespace m3p {

namespace {

constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

struct LayerCache {
  LayerNormCache ln1;
  Matrix normed1;  // LN1 output
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, T x T
  Matrix attended;            // concatenated head outputs
  Matrix drop1;               // dropout scale on attention branch (empty: none)
  LayerNormCache ln2;
  Matrix normed2;
  Matrix ff_pre;  // before GELU
  Matrix ff_act;  // after GELU
  Matrix drop2;
};

}  // namespace

struct ForwardCache {
  std::vector<int> token_ids;
  std::vector<int> language_ids;
  std::vector<std::uint8_t> key_allowed;
  Matrix region_features;
  Matrix region_spatial;
  Matrix drop0;
  std::vector<LayerCache> layers;
  LayerNormCache final_ln;
};

EncoderOutput::EncoderOutput() = default;
EncoderOutput::~EncoderOutput() = default;
EncoderOutput::EncoderOutput(EncoderOutput&&) noexcept = default;
EncoderOutput& EncoderOutput::operator=(EncoderOutput&&) noexcept = default;

Matrix EncoderOutput::cls() const {
  if (hidden.empty()) return {};
  Matrix out(static_cast<Eigen::Index>(hidden.size()), hidden.front().cols());
  for (std::size_t b = 0; b < hidden.size(); ++b) out.row(static_cast<Eigen::Index>(b)) = hidden[b].row(0);
  return out;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(hidden_dim, "hidden_dim");
  positive(feedforward_dim, "feedforward_dim");
  positive(vocab_size, "vocab_size");
  positive(n_language_ids, "n_language_ids");
  positive(max_text_len, "max_text_len");
  positive(max_regions, "max_regions");
  positive(feature_dim, "feature_dim");
  positive(n_classes, "n_classes");
  if (hidden_dim % n_heads != 0) throw ConfigError("model config: hidden_dim must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model config: dropout must lie in [0,1)");
  if (!(init_std > 0.0)) throw ConfigError("model config: init_std must be positive");
}

// ---------------------------------------------------------------- parameters

std::vector<std::pair<std::string, const Matrix*>> EncoderParameters::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out = {
      {"token_embedding", &token_embedding},
      {"position_embedding", &position_embedding},
      {"language_embedding", &language_embedding},
      {"visual_projection", &visual_projection},
      {"visual_bias", &visual_bias},
      {"spatial_projection", &spatial_projection},
      {"spatial_bias", &spatial_bias},
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (const auto& [name, m] : std::initializer_list<std::pair<const char*, const Matrix*>>{
             {"ln1_gain", &p.ln1_gain}, {"ln1_bias", &p.ln1_bias},   {"query", &p.query},
             {"query_bias", &p.query_bias}, {"key", &p.key},         {"key_bias", &p.key_bias},
             {"value", &p.value},       {"value_bias", &p.value_bias}, {"output", &p.output},
             {"output_bias", &p.output_bias}, {"ln2_gain", &p.ln2_gain}, {"ln2_bias", &p.ln2_bias},
             {"ff_in", &p.ff_in},       {"ff_in_bias", &p.ff_in_bias}, {"ff_out", &p.ff_out},
             {"ff_out_bias", &p.ff_out_bias}}) {
      out.emplace_back(prefix + name, m);
    }
  }
  out.insert(out.end(), {
                            {"final_gain", &final_gain},
                            {"final_bias", &final_bias},
                            {"mlm_weight", &mlm_weight},
                            {"mlm_bias", &mlm_bias},
                            {"mrm_regression", &mrm_regression},
                            {"mrm_regression_bias", &mrm_regression_bias},
                            {"mrm_class", &mrm_class},
                            {"mrm_class_bias", &mrm_class_bias},
                            {"vlm_weight", &vlm_weight},
                            {"vlm_bias", &vlm_bias},
                        });
  return out;
}

std::vector<std::pair<std::string, Matrix*>> EncoderParameters::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (auto& [name, m] : std::as_const(*this).tensors()) out.emplace_back(name, const_cast<Matrix*>(m));
  return out;
}

EncoderParameters EncoderParameters::zeros_like() const {
  EncoderParameters z = *this;
  for (auto& [name, m] : z.tensors()) m->setZero();
  return z;
}

std::size_t EncoderParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

bool EncoderParameters::all_finite() const {
  for (const auto& [name, m] : tensors()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

EncoderParameters init_parameters(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  auto weight = [&](int rows, int cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  auto zeros = [](int cols) { return Matrix(Matrix::Zero(1, cols)); };
  auto ones = [](int cols) { return Matrix(Matrix::Ones(1, cols)); };

  const int d = config.hidden_dim;
  const int ff = config.feedforward_dim;
  EncoderParameters p;
  p.token_embedding = weight(config.vocab_size, d);
  p.position_embedding = weight(config.max_text_len, d);
  p.language_embedding = weight(config.n_language_ids, d);
  p.visual_projection = weight(config.feature_dim, d);
  p.visual_bias = zeros(d);
  p.spatial_projection = weight(5, d);
  p.spatial_bias = zeros(d);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParameters layer;
    layer.ln1_gain = ones(d);
    layer.ln1_bias = zeros(d);
    layer.query = weight(d, d);
    layer.query_bias = zeros(d);
    layer.key = weight(d, d);
    layer.key_bias = zeros(d);
    layer.value = weight(d, d);
    layer.value_bias = zeros(d);
    layer.output = weight(d, d);
    layer.output_bias = zeros(d);
    layer.ln2_gain = ones(d);
    layer.ln2_bias = zeros(d);
    layer.ff_in = weight(d, ff);
    layer.ff_in_bias = zeros(ff);
    layer.ff_out = weight(ff, d);
    layer.ff_out_bias = zeros(d);
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = ones(d);
  p.final_bias = zeros(d);
  p.mlm_weight = weight(d, config.vocab_size);
  p.mlm_bias = zeros(config.vocab_size);
  p.mrm_regression = weight(d, config.feature_dim);
  p.mrm_regression_bias = zeros(config.feature_dim);
  p.mrm_class = weight(d, config.n_classes);
  p.mrm_class_bias = zeros(config.n_classes);
  p.vlm_weight = weight(d, 1);
  p.vlm_bias = zeros(1);
  return p;
}

// ---------------------------------------------------------------- primitives

namespace {

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
  const Eigen::Index rows = x.rows();
  cache.xhat.resize(rows, x.cols());
  cache.rstd.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const double var = centered.square().mean();
    cache.rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.xhat.row(i) = centered * cache.rstd(i);
  }
  Matrix y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix& d_gain,
                           Matrix& d_bias) {
  d_gain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  d_bias.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) < rate ? 0.0 : keep;
  return mask;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

void affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db, Matrix* dx) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  if (dx) dx->noalias() += dy * w.transpose();
}

ForwardCache validate_and_copy(const ModelConfig& config, const EncoderInput& in, ItemLayout& layout) {
  ForwardCache cache;
  const auto m = static_cast<int>(in.token_ids.size());
  if (m < 1) throw ConfigError("encode: empty text input");
  if (m > config.max_text_len) {
    throw ConfigError("encode: text length " + std::to_string(m) + " exceeds max_text_len " +
                      std::to_string(config.max_text_len));
  }
  if (in.language_ids.size() != in.token_ids.size()) throw ConfigError("encode: language id length mismatch");
  if (!in.attention.empty() && in.attention.size() != in.token_ids.size()) {
    throw ConfigError("encode: attention mask length mismatch");
  }
  for (int id : in.token_ids) {
    if (id < 0 || id >= config.vocab_size) throw ConfigError("encode: token id out of range");
  }
  for (int id : in.language_ids) {
    if (id < 0 || id >= config.n_language_ids) throw ConfigError("encode: language id out of range");
  }
  int n = 0;
  if (in.region_features) {
    if (!in.region_spatial || in.region_spatial->rows() != in.region_features->rows() ||
        in.region_spatial->cols() != 5) {
      throw ConfigError("encode: region spatial matrix must be N x 5");
    }
    if (in.region_features->cols() != config.feature_dim) throw ConfigError("encode: region feature dimension mismatch");
    n = static_cast<int>(in.region_features->rows());
    if (n > config.max_regions) {
      throw ConfigError("encode: " + std::to_string(n) + " regions exceed max_regions " +
                        std::to_string(config.max_regions));
    }
    if (n > 0) {
      cache.region_features = *in.region_features;
      cache.region_spatial = *in.region_spatial;
    }
  }
  layout.text_len = m;
  layout.n_regions = n;
  cache.token_ids.assign(in.token_ids.begin(), in.token_ids.end());
  cache.language_ids.assign(in.language_ids.begin(), in.language_ids.end());
  cache.key_allowed.assign(static_cast<std::size_t>(layout.total()), 1);
  if (!in.attention.empty()) {
    for (int t = 0; t < m; ++t) cache.key_allowed[t] = in.attention[t] ? 1 : 0;
  }
  return cache;
}

Matrix forward_item(const EncoderParameters& p, const ModelConfig& config, ForwardCache& cache,
                    const ItemLayout& layout, Rng* drop_rng) {
  const int d = config.hidden_dim;
  const int T = layout.total();
  const int M = layout.text_len;
  const int N = layout.n_regions;
  const bool train = drop_rng != nullptr && config.dropout > 0.0;

  Matrix x(T, d);
  for (int t = 0; t < M; ++t) {
    x.row(t) = p.token_embedding.row(cache.token_ids[t]) + p.position_embedding.row(t) +
               p.language_embedding.row(cache.language_ids[t]);
  }
  if (N > 0) {
    x.row(M) = p.token_embedding.row(Tokenizer::kImg);
    Matrix regions = affine(cache.region_features, p.visual_projection, p.visual_bias);
    regions += affine(cache.region_spatial, p.spatial_projection, p.spatial_bias);
    x.block(M + 1, 0, N, d) = regions;
  }
  if (train) {
    cache.drop0 = dropout_mask(T, d, config.dropout, *drop_rng);
    x.array() *= cache.drop0.array();
  }

  const int heads = config.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  cache.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParameters& w = p.layers[l];
    LayerCache& c = cache.layers[l];
    c.normed1 = layer_norm(x, w.ln1_gain, w.ln1_bias, c.ln1);
    c.q = affine(c.normed1, w.query, w.query_bias);
    c.k = affine(c.normed1, w.key, w.key_bias);
    c.v = affine(c.normed1, w.value, w.value_bias);
    c.attended.resize(T, d);
    c.probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
      Matrix s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
      for (int j = 0; j < T; ++j) {
        if (!cache.key_allowed[j]) s.col(j).setConstant(kNegInf);
      }
      c.probs[h] = softmax_rows(s);
      c.attended.middleCols(h * dh, dh).noalias() = c.probs[h] * c.v.middleCols(h * dh, dh);
    }
    Matrix branch = affine(c.attended, w.output, w.output_bias);
    if (train) {
      c.drop1 = dropout_mask(T, d, config.dropout, *drop_rng);
      branch.array() *= c.drop1.array();
    }
    x += branch;

    c.normed2 = layer_norm(x, w.ln2_gain, w.ln2_bias, c.ln2);
    c.ff_pre = affine(c.normed2, w.ff_in, w.ff_in_bias);
    c.ff_act = c.ff_pre.unaryExpr([](double v) { return gelu(v); });
    branch = affine(c.ff_act, w.ff_out, w.ff_out_bias);
    if (train) {
      c.drop2 = dropout_mask(T, d, config.dropout, *drop_rng);
      branch.array() *= c.drop2.array();
    }
    x += branch;
  }
  return layer_norm(x, p.final_gain, p.final_bias, cache.final_ln);
}

void backward_item(const EncoderParameters& p, const ModelConfig& config, const ForwardCache& cache,
                   const ItemLayout& layout, const Matrix& d_out, EncoderParameters& g) {
  const int d = config.hidden_dim;
  const int T = layout.total();
  const int M = layout.text_len;
  const int N = layout.n_regions;
  const int heads = config.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dx = layer_norm_backward(d_out, p.final_gain, cache.final_ln, g.final_gain, g.final_bias);

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const LayerParameters& w = p.layers[li];
    LayerParameters& gw = g.layers[li];
    const LayerCache& c = cache.layers[li];

    // Feed-forward branch.
    Matrix d_branch = dx;
    if (c.drop2.size()) d_branch.array() *= c.drop2.array();
    Matrix d_act = Matrix::Zero(T, config.feedforward_dim);
    affine_backward(c.ff_act, w.ff_out, d_branch, gw.ff_out, gw.ff_out_bias, &d_act);
    Matrix d_pre = d_act.array() * c.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    Matrix d_normed = Matrix::Zero(T, d);
    affine_backward(c.normed2, w.ff_in, d_pre, gw.ff_in, gw.ff_in_bias, &d_normed);
    dx += layer_norm_backward(d_normed, w.ln2_gain, c.ln2, gw.ln2_gain, gw.ln2_bias);

    // Attention branch.
    d_branch = dx;
    if (c.drop1.size()) d_branch.array() *= c.drop1.array();
    Matrix d_attended = Matrix::Zero(T, d);
    affine_backward(c.attended, w.output, d_branch, gw.output, gw.output_bias, &d_attended);
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& P = c.probs[h];
      const auto d_head = d_attended.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = P.transpose() * d_head;
      const Matrix dP = d_head * c.v.middleCols(h * dh, dh).transpose();
      const Eigen::VectorXd row_dot = (dP.array() * P.array()).rowwise().sum();
      const Matrix dS = (P.array() * (dP.colwise() - row_dot).array()) * scale;
      dq.middleCols(h * dh, dh).noalias() = dS * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = dS.transpose() * c.q.middleCols(h * dh, dh);
    }
    d_normed.setZero();
    affine_backward(c.normed1, w.query, dq, gw.query, gw.query_bias, &d_normed);
    affine_backward(c.normed1, w.key, dk, gw.key, gw.key_bias, &d_normed);
    affine_backward(c.normed1, w.value, dv, gw.value, gw.value_bias, &d_normed);
    dx += layer_norm_backward(d_normed, w.ln1_gain, c.ln1, gw.ln1_gain, gw.ln1_bias);
  }

  if (cache.drop0.size()) dx.array() *= cache.drop0.array();
  for (int t = 0; t < M; ++t) {
    g.token_embedding.row(cache.token_ids[t]) += dx.row(t);
    g.position_embedding.row(t) += dx.row(t);
    g.language_embedding.row(cache.language_ids[t]) += dx.row(t);
  }
  if (N > 0) {
    g.token_embedding.row(Tokenizer::kImg) += dx.row(M);
    const Matrix d_regions = dx.block(M + 1, 0, N, d);
    affine_backward(cache.region_features, p.visual_projection, d_regions, g.visual_projection, g.visual_bias,
                    nullptr);
    affine_backward(cache.region_spatial, p.spatial_projection, d_regions, g.spatial_projection, g.spatial_bias,
                    nullptr);
  }
}

}  // namespace

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

// ---------------------------------------------------------------- encode

EncoderOutput encode(const EncoderParameters& params, const ModelConfig& config, std::span<const EncoderInput> inputs,
                     Rng* dropout_rng) {
  EncoderOutput out;
  out.hidden.reserve(inputs.size());
  out.layouts.reserve(inputs.size());
  out.caches.reserve(inputs.size());
  for (const auto& in : inputs) {
    ItemLayout layout;
    ForwardCache cache = validate_and_copy(config, in, layout);
    out.hidden.push_back(forward_item(params, config, cache, layout, dropout_rng));
    out.layouts.push_back(layout);
    out.caches.push_back(std::move(cache));
  }
  return out;
}

EncoderOutput encode(const EncoderParameters& params, const ModelConfig& config, const TextBatch& text,
                     const std::vector<RegionSet>* regions, Rng* dropout_rng) {
  if (regions && regions->size() != text.size()) throw ConfigError("encode: region batch size mismatch");
  std::vector<EncoderInput> inputs(text.size());
  for (std::size_t b = 0; b < text.size(); ++b) {
    inputs[b].token_ids = text.token_ids[b];
    inputs[b].language_ids = text.language_ids[b];
    inputs[b].attention = text.attention[b];
    if (regions) {
      inputs[b].region_features = &(*regions)[b].features;
      inputs[b].region_spatial = &(*regions)[b].spatial;
    }
  }
  return encode(params, config, inputs, dropout_rng);
}

void encode_backward(const EncoderParameters& params, const ModelConfig& config, const EncoderOutput& output,
                     std::span<const Matrix> d_hidden, EncoderParameters& grads) {
  if (d_hidden.size() != output.size()) throw ConfigError("encode_backward: gradient batch size mismatch");
  for (std::size_t b = 0; b < output.size(); ++b) {
    backward_item(params, config, output.caches[b], output.layouts[b], d_hidden[b], grads);
  }
}

Eigen::RowVectorXd text_embedding(const EncoderParameters& params, int token_id, int position, int language_id) {
  return params.token_embedding.row(token_id) + params.position_embedding.row(position) +
         params.language_embedding.row(language_id);
}

// ---------------------------------------------------------------- heads

namespace {

Matrix gather_rows(const Matrix& hidden, std::span<const int> positions) {
  Matrix out(static_cast<Eigen::Index>(positions.size()), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = hidden.row(positions[i]);
  return out;
}

void scatter_rows(const Matrix& rows, std::span<const int> positions, Matrix& target) {
  for (std::size_t i = 0; i < positions.size(); ++i) target.row(positions[i]) += rows.row(static_cast<Eigen::Index>(i));
}

std::vector<int> region_positions(const EncoderOutput& output, std::size_t item, std::span<const int> indices) {
  const ItemLayout& layout = output.layouts.at(item);
  std::vector<int> out;
  for (int r : indices) {
    if (r < 0 || r >= layout.n_regions) throw ConfigError("mrm_outputs: region index out of range");
    out.push_back(layout.region_position(r));
  }
  return out;
}

void check_text_positions(const EncoderOutput& output, std::size_t item, std::span<const int> positions) {
  const ItemLayout& layout = output.layouts.at(item);
  for (int pos : positions) {
    if (pos < 0 || pos >= layout.text_len) throw ConfigError("mlm_logits: position out of text range");
  }
}

}  // namespace

Matrix mlm_logits(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                  std::span<const int> positions) {
  check_text_positions(output, item, positions);
  return affine(gather_rows(output.hidden[item], positions), params.mlm_weight, params.mlm_bias);
}

void mlm_logits_backward(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                         std::span<const int> positions, const Matrix& d_logits, EncoderParameters& grads,
                         Matrix& d_hidden) {
  const Matrix rows = gather_rows(output.hidden[item], positions);
  Matrix d_rows = Matrix::Zero(rows.rows(), rows.cols());
  affine_backward(rows, params.mlm_weight, d_logits, grads.mlm_weight, grads.mlm_bias, &d_rows);
  scatter_rows(d_rows, positions, d_hidden);
}

MrmOutputs mrm_outputs(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                       std::span<const int> region_indices) {
  const auto positions = region_positions(output, item, region_indices);
  const Matrix rows = gather_rows(output.hidden[item], positions);
  return {affine(rows, params.mrm_regression, params.mrm_regression_bias),
          affine(rows, params.mrm_class, params.mrm_class_bias)};
}

void mrm_outputs_backward(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                          std::span<const int> region_indices, const Matrix& d_regression,
                          const Matrix& d_class_scores, EncoderParameters& grads, Matrix& d_hidden) {
  const auto positions = region_positions(output, item, region_indices);
  const Matrix rows = gather_rows(output.hidden[item], positions);
  Matrix d_rows = Matrix::Zero(rows.rows(), rows.cols());
  affine_backward(rows, params.mrm_regression, d_regression, grads.mrm_regression, grads.mrm_regression_bias, &d_rows);
  affine_backward(rows, params.mrm_class, d_class_scores, grads.mrm_class, grads.mrm_class_bias, &d_rows);
  scatter_rows(d_rows, positions, d_hidden);
}

std::vector<double> vlm_score(const EncoderParameters& params, const EncoderOutput& output) {
  std::vector<double> scores;
  scores.reserve(output.size());
  for (const auto& h : output.hidden) scores.push_back(h.row(0).dot(params.vlm_weight.col(0)) + params.vlm_bias(0, 0));
  return scores;
}

void vlm_score_backward(const EncoderParameters& params, const EncoderOutput& output, std::size_t item,
                        double d_score, EncoderParameters& grads, Matrix& d_hidden) {
  grads.vlm_weight.col(0) += d_score * output.hidden[item].row(0).transpose();
  grads.vlm_bias(0, 0) += d_score;
  d_hidden.row(0) += d_score * params.vlm_weight.col(0).transpose();
}

}  // namespace m3p
