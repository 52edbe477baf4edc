#include "p2c/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "p2c/errors.hpp"
#include "p2c/kernels.hpp"
#include "p2c/tokenizer.hpp"

namespace p2c::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw InputError("invalid model config: " + m); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (d_model == 0 || d_model % 2 != 0) fail("d_model must be positive and even");
  if (num_heads == 0 || d_model % num_heads != 0) fail("d_model must be divisible by num_heads");
  if (d_ff == 0) fail("d_ff must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (max_positions < 2) fail("max_positions must be >= 2");
  if (src_vocab <= tok::kNumSpecials || tgt_vocab <= tok::kNumSpecials) fail("vocabulary sizes must exceed 4");
}

ModelConfig ModelConfig::small(std::size_t src_vocab, std::size_t tgt_vocab) {
  ModelConfig c;
  c.num_layers = 1;
  c.d_model = 128;
  c.num_heads = 8;
  c.d_ff = 512;
  c.dropout_rate = 0.0;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"d_model", c.d_model},
          {"num_heads", c.num_heads},
          {"d_ff", c.d_ff},
          {"dropout_rate", c.dropout_rate},
          {"max_positions", c.max_positions},
          {"src_vocab", c.src_vocab},
          {"tgt_vocab", c.tgt_vocab},
          {"seed", c.seed},
          {"activation", c.activation == Activation::Relu ? "relu" : "linear"}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.value("num_layers", c.num_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.d_ff = j.value("d_ff", 4 * c.d_model);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.src_vocab = j.value("src_vocab", c.src_vocab);
  c.tgt_vocab = j.value("tgt_vocab", c.tgt_vocab);
  c.seed = j.value("seed", c.seed);
  const auto act = j.value("activation", std::string("relu"));
  if (act != "relu" && act != "linear") throw InputError("unknown activation: " + act);
  c.activation = act == "relu" ? Activation::Relu : Activation::Linear;
  return c;
}

namespace {

class SpecBuilder {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    specs.push_back({std::move(name), rows, cols});
    return specs.size() - 1;
  }

  AttentionIndex attention(const std::string& p, std::size_t d) {
    AttentionIndex a{};
    a.wq = add(p + ".wq", d, d);
    a.bq = add(p + ".bq", 1, d);
    a.wk = add(p + ".wk", d, d);
    a.bk = add(p + ".bk", 1, d);
    a.wv = add(p + ".wv", d, d);
    a.bv = add(p + ".bv", 1, d);
    a.wo = add(p + ".wo", d, d);
    a.bo = add(p + ".bo", 1, d);
    return a;
  }

  NormIndex norm(const std::string& p, std::size_t d) { return {add(p + ".gamma", 1, d), add(p + ".beta", 1, d)}; }

  FeedForwardIndex ffn(const std::string& p, std::size_t d, std::size_t ff) {
    return {add(p + ".w1", d, ff), add(p + ".b1", 1, ff), add(p + ".w2", ff, d), add(p + ".b2", 1, d)};
  }

  std::vector<ArraySpec> specs;
};

ParameterLayout build_layout(const ModelConfig& c, std::vector<ArraySpec>& specs_out) {
  SpecBuilder b;
  ParameterLayout L;
  const auto d = c.d_model;
  L.src_embed = b.add("src_embed", c.src_vocab, d);
  L.tgt_embed = b.add("tgt_embed", c.tgt_vocab, d);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto p = "encoder." + std::to_string(l);
    EncoderLayerIndex e{};
    e.self_attn = b.attention(p + ".self_attn", d);
    e.norm1 = b.norm(p + ".norm1", d);
    e.ffn = b.ffn(p + ".ffn", d, c.d_ff);
    e.norm2 = b.norm(p + ".norm2", d);
    L.encoder.push_back(e);
  }
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto p = "decoder." + std::to_string(l);
    DecoderLayerIndex e{};
    e.self_attn = b.attention(p + ".self_attn", d);
    e.norm1 = b.norm(p + ".norm1", d);
    e.cross_attn = b.attention(p + ".cross_attn", d);
    e.norm2 = b.norm(p + ".norm2", d);
    e.ffn = b.ffn(p + ".ffn", d, c.d_ff);
    e.norm3 = b.norm(p + ".norm3", d);
    L.decoder.push_back(e);
  }
  L.out_w = b.add("out.w", d, c.tgt_vocab);
  L.out_b = b.add("out.b", 1, c.tgt_vocab);
  specs_out = std::move(b.specs);
  return L;
}

std::string last_component(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}

}  // namespace

std::vector<ArraySpec> parameter_specs(const ModelConfig& config) {
  std::vector<ArraySpec> specs;
  build_layout(config, specs);
  return specs;
}

Parameters::Parameters(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::vector<ArraySpec> specs;
  layout_ = build_layout(config_, specs);
  for (auto& s : specs) {
    names_.push_back(s.name);
    arrays_.emplace_back(s.rows, s.cols);
  }
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

std::size_t Parameters::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw InputError("no parameter array named " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

std::vector<Matrix> Parameters::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(arrays_.size());
  for (const auto& a : arrays_) out.emplace_back(a.rows(), a.cols());
  return out;
}

Parameters init_params(const ModelConfig& config) {
  Parameters p(config);
  Rng rng(config.seed);
  auto names = p.names();
  for (std::size_t i = 0; i < p.arrays().size(); ++i) {
    Matrix& m = p.arrays()[i];
    const auto leaf = last_component(names[i]);
    if (leaf == "gamma") {
      m.fill(1.0);
    } else if (leaf == "beta" || leaf.front() == 'b') {
      m.fill(0.0);
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (double& x : m.values()) x = rng.uniform(-a, a);
    }
  }
  return p;
}

Matrix positional_encoding(std::size_t max_positions, std::size_t d_model) {
  if (d_model % 2 != 0) throw OddDimension("positional encoding needs an even d_model, got " + std::to_string(d_model));
  Matrix pe(max_positions, d_model);
  std::vector<double> inv_freq(d_model / 2);
  for (std::size_t i = 0; i < inv_freq.size(); ++i) {
    inv_freq[i] = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(d_model));
  }
  for (std::size_t pos = 0; pos < max_positions; ++pos) {
    for (std::size_t i = 0; i < inv_freq.size(); ++i) {
      const double angle = static_cast<double>(pos) * inv_freq[i];
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

MaskSet make_masks(std::span<const std::int32_t> src, std::span<const std::int32_t> tgt) {
  MaskSet m;
  m.source_padding.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) m.source_padding[i] = src[i] == tok::kPad ? 1 : 0;
  m.target = MaskMatrix(tgt.size(), tgt.size());
  for (std::size_t r = 0; r < tgt.size(); ++r) {
    for (std::size_t c = 0; c < tgt.size(); ++c) m.target.set(r, c, c > r || tgt[c] == tok::kPad);
  }
  return m;
}

std::pair<Matrix, Matrix> attention(const Matrix& q, const Matrix& k, const Matrix& v, const MaskMatrix* mask) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw ShapeMismatch("attention: Q/K/V shapes disagree");
  if (mask && (mask->rows != q.rows() || mask->cols != k.rows())) throw ShapeMismatch("attention: mask shape");
  Matrix weights;
  kernels::matmul_a_bt(q, k, weights);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (double& s : weights.values()) s *= scale;
  ad::masked_softmax(weights, mask);
  Matrix out;
  kernels::matmul(weights, v, out);
  return {std::move(out), std::move(weights)};
}

namespace {

using ad::NodeId;

MaskMatrix key_padding(std::size_t rows, const std::vector<unsigned char>& padding) {
  MaskMatrix m(rows, padding.size());
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(padding.begin(), padding.end(), m.bits.begin() + static_cast<std::ptrdiff_t>(r * padding.size()));
  }
  return m;
}

struct Pass {
  ad::Tape& t;
  const ModelConfig& cfg;
  bool training;
  Rng* rng;

  NodeId p(std::size_t index) const { return t.param(index); }

  NodeId drop(NodeId x) const { return training && cfg.dropout_rate > 0.0 ? ad::dropout(t, x, cfg.dropout_rate, *rng) : x; }

  NodeId attention(const AttentionIndex& a, NodeId query_in, NodeId kv_in, const MaskMatrix& mask) const {
    const NodeId q = ad::linear(t, query_in, p(a.wq), p(a.bq));
    const NodeId k = ad::linear(t, kv_in, p(a.wk), p(a.bk));
    const NodeId v = ad::linear(t, kv_in, p(a.wv), p(a.bv));
    const NodeId heads = ad::multi_head_attention(t, q, k, v, cfg.num_heads, mask);
    return ad::linear(t, heads, p(a.wo), p(a.bo));
  }

  NodeId feed_forward(const FeedForwardIndex& f, NodeId x) const {
    NodeId h = ad::linear(t, x, p(f.w1), p(f.b1));
    if (cfg.activation == Activation::Relu) h = ad::relu(t, h);
    return ad::linear(t, h, p(f.w2), p(f.b2));
  }

  // post-norm residual: norm(x + dropout(sublayer))
  NodeId residual(NodeId x, NodeId sub, const NormIndex& n) const {
    return ad::layer_norm(t, ad::add(t, x, drop(sub)), p(n.gamma), p(n.beta));
  }

  NodeId embed(std::size_t table, std::span<const std::int32_t> ids, const Matrix& pe) const {
    const double scale = std::sqrt(static_cast<double>(cfg.d_model));
    return drop(ad::add_constant(t, ad::embed(t, p(table), ids, scale), pe));
  }
};

void check_length(std::size_t len, std::size_t max_positions, const char* what) {
  if (len > max_positions) {
    throw SequenceTooLong(std::string(what) + " length " + std::to_string(len) + " exceeds max positions " +
                          std::to_string(max_positions));
  }
}

NodeId encode_source(const Pass& pass, const ParameterLayout& L, std::span<const std::int32_t> src,
                     const MaskMatrix& self_mask, const Matrix& pe) {
  NodeId x = pass.embed(L.src_embed, src, pe);
  for (const auto& layer : L.encoder) {
    x = pass.residual(x, pass.attention(layer.self_attn, x, x, self_mask), layer.norm1);
    x = pass.residual(x, pass.feed_forward(layer.ffn, x), layer.norm2);
  }
  return x;
}

NodeId decode_target(const Pass& pass, const ParameterLayout& L, NodeId memory, std::span<const std::int32_t> tgt_in,
                     const MaskMatrix& self_mask, const MaskMatrix& cross_mask, const Matrix& pe) {
  NodeId y = pass.embed(L.tgt_embed, tgt_in, pe);
  for (const auto& layer : L.decoder) {
    y = pass.residual(y, pass.attention(layer.self_attn, y, y, self_mask), layer.norm1);
    y = pass.residual(y, pass.attention(layer.cross_attn, y, memory, cross_mask), layer.norm2);
    y = pass.residual(y, pass.feed_forward(layer.ffn, y), layer.norm3);
  }
  return ad::linear(pass.t, y, pass.p(L.out_w), pass.p(L.out_b));
}

}  // namespace

NodeId forward_sample(ad::Tape& tape, const Parameters& params, std::span<const std::int32_t> src,
                      std::span<const std::int32_t> tgt_in, bool training, Rng* rng) {
  const auto& cfg = params.config();
  check_length(src.size(), cfg.max_positions, "source");
  check_length(tgt_in.size(), cfg.max_positions, "target");
  if (training && cfg.dropout_rate > 0.0 && rng == nullptr) throw Error("training forward needs a dropout stream");

  const auto masks = make_masks(src, tgt_in);
  const Matrix pe = positional_encoding(std::max(src.size(), tgt_in.size()), cfg.d_model);
  const Pass pass{tape, cfg, training, rng};
  const auto& L = params.layout();
  const NodeId memory = encode_source(pass, L, src, key_padding(src.size(), masks.source_padding), pe);
  return decode_target(pass, L, memory, tgt_in, masks.target, key_padding(tgt_in.size(), masks.source_padding), pe);
}

std::vector<Matrix> forward(const Parameters& params, std::span<const Ids> src, std::span<const Ids> tgt_in,
                            bool training, std::uint64_t dropout_seed, Execution exec) {
  if (src.size() != tgt_in.size()) throw ShapeMismatch("forward: source and target batch sizes differ");
  std::vector<Matrix> logits(src.size());
  auto one = [&](std::size_t b) {
    ad::Tape tape(params.arrays(), nullptr);
    Rng rng(derive_seed(dropout_seed, b));
    const NodeId out = forward_sample(tape, params, src[b], tgt_in[b], training, &rng);
    logits[b] = tape.value(out);
  };
  if (exec == Execution::Parallel) {
    const auto n = static_cast<std::ptrdiff_t>(src.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t b = 0; b < n; ++b) {
      try {
        one(static_cast<std::size_t>(b));
      } catch (...) {
#pragma omp critical(p2c_forward_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t b = 0; b < src.size(); ++b) one(b);
  }
  return logits;
}

Ids greedy_decode_reference(const Parameters& params, std::span<const std::int32_t> src, std::size_t max_len) {
  const auto& cfg = params.config();
  check_length(src.size(), cfg.max_positions, "source");
  const auto& L = params.layout();
  const std::size_t budget = std::min(max_len, cfg.max_positions - 1);

  ad::Tape enc_tape(params.arrays(), nullptr);
  const auto src_masks = make_masks(src, {});
  const Matrix pe = positional_encoding(std::max(src.size(), budget + 1), cfg.d_model);
  const Pass enc_pass{enc_tape, cfg, false, nullptr};
  const Matrix memory =
      enc_tape.value(encode_source(enc_pass, L, src, key_padding(src.size(), src_masks.source_padding), pe));

  Ids out{tok::kStart};
  for (std::size_t step = 0; step < budget; ++step) {
    ad::Tape tape(params.arrays(), nullptr);
    const Pass pass{tape, cfg, false, nullptr};
    const auto masks = make_masks(src, out);
    const NodeId mem = tape.constant(memory);
    const NodeId logits = decode_target(pass, L, mem, out, masks.target, key_padding(out.size(), masks.source_padding), pe);
    auto last = tape.value(logits).row(out.size() - 1);
    const auto next = static_cast<std::int32_t>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == tok::kEnd) break;
    out.push_back(next);
  }
  out.push_back(tok::kEnd);
  return out;
}

namespace {

Matrix append_row(const Matrix& m, std::span<const double> row) {
  Matrix out(m.rows() + 1, row.size());
  std::copy(m.values().begin(), m.values().end(), out.values().begin());
  std::copy(row.begin(), row.end(), out.values().begin() + static_cast<std::ptrdiff_t>(m.size()));
  return out;
}

Matrix row_matrix(const Matrix& m, std::size_t r) {
  Matrix out(1, m.cols());
  const auto src = m.row(r);
  std::copy(src.begin(), src.end(), out.values().begin());
  return out;
}

}  // namespace

// Decoder layers are causal, so the hidden state of an emitted position never
// changes. Each step therefore only pushes the newest position through the
// stack, attending over cached self-attention keys/values.
Ids greedy_decode(const Parameters& params, std::span<const std::int32_t> src, std::size_t max_len) {
  const auto& cfg = params.config();
  check_length(src.size(), cfg.max_positions, "source");
  const auto& L = params.layout();
  const std::size_t budget = std::min(max_len, cfg.max_positions - 1);

  ad::Tape enc_tape(params.arrays(), nullptr);
  const auto src_masks = make_masks(src, {});
  const Matrix pe = positional_encoding(std::max(src.size(), budget + 1), cfg.d_model);
  const Pass enc_pass{enc_tape, cfg, false, nullptr};
  const NodeId memory = encode_source(enc_pass, L, src, key_padding(src.size(), src_masks.source_padding), pe);

  const std::size_t layers = L.decoder.size();
  std::vector<Matrix> cross_k(layers), cross_v(layers), self_k(layers), self_v(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& a = L.decoder[l].cross_attn;
    cross_k[l] = enc_tape.value(ad::linear(enc_tape, memory, enc_pass.p(a.wk), enc_pass.p(a.bk)));
    cross_v[l] = enc_tape.value(ad::linear(enc_tape, memory, enc_pass.p(a.wv), enc_pass.p(a.bv)));
    self_k[l] = Matrix(0, cfg.d_model);
    self_v[l] = Matrix(0, cfg.d_model);
  }
  const MaskMatrix cross_mask = key_padding(1, src_masks.source_padding);
  const double scale = std::sqrt(static_cast<double>(cfg.d_model));

  Ids out{tok::kStart};
  std::vector<unsigned char> self_padding;
  for (std::size_t step = 0; step < budget; ++step) {
    const std::size_t pos = out.size() - 1;
    ad::Tape t(params.arrays(), nullptr);
    const Pass pass{t, cfg, false, nullptr};
    const std::int32_t id = out.back();
    NodeId y = ad::add_constant(t, ad::embed(t, pass.p(L.tgt_embed), std::span(&id, 1), scale), row_matrix(pe, pos));
    self_padding.push_back(id == tok::kPad ? 1 : 0);
    const MaskMatrix self_mask = key_padding(1, self_padding);
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& layer = L.decoder[l];
      const auto& sa = layer.self_attn;
      const NodeId q = ad::linear(t, y, pass.p(sa.wq), pass.p(sa.bq));
      self_k[l] = append_row(self_k[l], t.value(ad::linear(t, y, pass.p(sa.wk), pass.p(sa.bk))).row(0));
      self_v[l] = append_row(self_v[l], t.value(ad::linear(t, y, pass.p(sa.wv), pass.p(sa.bv))).row(0));
      const NodeId self_heads =
          ad::multi_head_attention(t, q, t.constant(self_k[l]), t.constant(self_v[l]), cfg.num_heads, self_mask);
      y = pass.residual(y, ad::linear(t, self_heads, pass.p(sa.wo), pass.p(sa.bo)), layer.norm1);

      const auto& ca = layer.cross_attn;
      const NodeId cq = ad::linear(t, y, pass.p(ca.wq), pass.p(ca.bq));
      const NodeId cross_heads =
          ad::multi_head_attention(t, cq, t.constant(cross_k[l]), t.constant(cross_v[l]), cfg.num_heads, cross_mask);
      y = pass.residual(y, ad::linear(t, cross_heads, pass.p(ca.wo), pass.p(ca.bo)), layer.norm2);
      y = pass.residual(y, pass.feed_forward(layer.ffn, y), layer.norm3);
    }
    const auto last = t.value(ad::linear(t, y, pass.p(L.out_w), pass.p(L.out_b))).row(0);
    const auto next = static_cast<std::int32_t>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == tok::kEnd) break;
    out.push_back(next);
  }
  out.push_back(tok::kEnd);
  return out;
}

}  // namespace p2c::model
