#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "p2c/autodiff.hpp"
#include "p2c/tensor.hpp"

namespace p2c::model {

enum class Activation { Relu, Linear };

/// Execution strategy for batch-level work: samples in an OpenMP parallel
/// loop, or the serial reference loop.
enum class Execution { Serial, Parallel };

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t d_model = 128;
  std::size_t num_heads = 8;
  std::size_t d_ff = 512;
  double dropout_rate = 0.1;
  std::size_t max_positions = 2048;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::uint64_t seed = 0;
  Activation activation = Activation::Relu;

  /// Throws InputError when an invariant does not hold.
  void validate() const;

  /// One layer of width 128, no dropout: the desk-scale configuration used for
  /// overfit runs.
  static ModelConfig small(std::size_t src_vocab, std::size_t tgt_vocab);

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct AttentionIndex {
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
};
struct NormIndex {
  std::size_t gamma, beta;
};
struct FeedForwardIndex {
  std::size_t w1, b1, w2, b2;
};
struct EncoderLayerIndex {
  AttentionIndex self_attn;
  NormIndex norm1;
  FeedForwardIndex ffn;
  NormIndex norm2;
};
struct DecoderLayerIndex {
  AttentionIndex self_attn;
  NormIndex norm1;
  AttentionIndex cross_attn;
  NormIndex norm2;
  FeedForwardIndex ffn;
  NormIndex norm3;
};

/// Positions of every named array inside Parameters::arrays.
struct ParameterLayout {
  std::size_t src_embed = 0;
  std::size_t tgt_embed = 0;
  std::vector<EncoderLayerIndex> encoder;
  std::vector<DecoderLayerIndex> decoder;
  std::size_t out_w = 0;
  std::size_t out_b = 0;
};

struct ArraySpec {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

/// Names and shapes of all arrays, in storage order, for a configuration.
std::vector<ArraySpec> parameter_specs(const ModelConfig& config);

class Parameters {
 public:
  Parameters() = default;
  /// Zero-filled arrays with the shapes implied by `config`.
  explicit Parameters(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  std::span<const std::string> names() const { return names_; }
  std::vector<Matrix>& arrays() { return arrays_; }
  const std::vector<Matrix>& arrays() const { return arrays_; }
  std::size_t count() const;  // scalar parameter count
  std::size_t index_of(const std::string& name) const;

  /// Zero arrays with the same shapes (a gradient or moment set).
  std::vector<Matrix> zeros_like() const;

  bool operator==(const Parameters& o) const { return config_ == o.config_ && arrays_ == o.arrays_; }

 private:
  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<std::string> names_;
  std::vector<Matrix> arrays_;
};

using GradientSet = std::vector<Matrix>;

/// Seeded Xavier-uniform weights, zero biases, unit layer-norm scales.
Parameters init_params(const ModelConfig& config);

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same). Throws OddDimension.
Matrix positional_encoding(std::size_t max_positions, std::size_t d_model);

using Ids = std::vector<std::int32_t>;

struct MaskSet {
  std::vector<unsigned char> source_padding;  // true where the source token is PAD
  MaskMatrix target;                          // look-ahead OR target padding (over keys)
};

MaskSet make_masks(std::span<const std::int32_t> src, std::span<const std::int32_t> tgt);

/// Single-head scaled dot-product attention. Returns (output, weights).
std::pair<Matrix, Matrix> attention(const Matrix& q, const Matrix& k, const Matrix& v, const MaskMatrix* mask);

/// Records the full encoder-decoder pass for one sample on `tape` and returns
/// the logits node [tgt.size() x tgt_vocab]. `rng` drives dropout and may be
/// null when `training` is false.
ad::NodeId forward_sample(ad::Tape& tape, const Parameters& params, std::span<const std::int32_t> src,
                          std::span<const std::int32_t> tgt_in, bool training, Rng* rng);

/// Batched forward. Each sample's dropout stream is derived from (dropout_seed, index).
std::vector<Matrix> forward(const Parameters& params, std::span<const Ids> src, std::span<const Ids> tgt_in,
                            bool training, std::uint64_t dropout_seed = 0, Execution exec = Execution::Parallel);

/// START, then the argmax token per step until END or max_len generated tokens.
Ids greedy_decode(const Parameters& params, std::span<const std::int32_t> src, std::size_t max_len);

/// Same contract as greedy_decode, re-running the full decoder at every step.
/// Kept as the reference the cached decoder is tested against.
Ids greedy_decode_reference(const Parameters& params, std::span<const std::int32_t> src, std::size_t max_len);

}  // namespace p2c::model
