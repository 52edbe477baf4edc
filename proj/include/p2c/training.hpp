#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "p2c/dataset.hpp"
#include "p2c/model.hpp"
#include "p2c/tokenizer.hpp"

namespace p2c::train {

using model::Execution;
using model::GradientSet;
using model::Ids;
using model::ModelConfig;
using model::Parameters;

/// Encoded (source, target) pair; both sides start with START and end with END.
struct EncodedPair {
  Ids src;
  Ids tgt;
};

struct EncodedCorpus {
  std::vector<EncodedPair> train;
  std::vector<EncodedPair> validation;
};

std::vector<EncodedPair> encode_pairs(std::span<const dataset::ProgramPair> pairs, const tok::Vocabulary& src_vocab,
                                      const tok::Vocabulary& tgt_vocab);

/// Teacher-forcing batch padded with PAD to the longest sequence on each side.
/// tgt_in is the target without its last token, tgt_out without its first.
struct Batch {
  std::vector<Ids> src;
  std::vector<Ids> tgt_in;
  std::vector<Ids> tgt_out;
  std::size_t target_tokens = 0;  // non-PAD entries of tgt_out

  std::size_t size() const { return src.size(); }
};

Batch make_batch(std::span<const EncodedPair> pairs);

/// Mean over unmasked positions of -log softmax(logits)[target]. pad_mask
/// entries set to true are excluded. Throws AllPositionsMasked.
double sparse_ce_loss(std::span<const Matrix> logits, std::span<const Ids> targets,
                      std::span<const std::vector<unsigned char>> pad_mask);

struct LossAndGrads {
  double loss = 0.0;
  GradientSet grads;
};

/// Loss of the batch and its analytic gradient with respect to every array.
/// Samples are differentiated independently and summed in sample order, so
/// Serial and Parallel give bitwise-identical results.
LossAndGrads loss_and_grads(const Parameters& params, const Batch& batch, bool training, std::uint64_t dropout_seed,
                            Execution exec = Execution::Parallel);

/// Loss only; no gradient bookkeeping.
double batch_loss(const Parameters& params, const Batch& batch, bool training, std::uint64_t dropout_seed,
                  Execution exec = Execution::Parallel);

/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct AdamState {
  GradientSet m;
  GradientSet v;
  std::size_t step = 0;
};

AdamState make_adam_state(const Parameters& params);

/// One adaptive-moment update with bias correction at the incremented step.
/// Throws NonFiniteGradient before touching anything.
void adam_update(std::vector<Matrix>& params, const GradientSet& grads, AdamState& state, double lr,
                 const AdamHyper& hyper = {});

struct OptimizerConfig {
  AdamHyper adam;
  std::size_t warmup_steps = 1000;
  double lr_factor = 1.0;
};

/// adam_update with lr = lr_factor * lr_schedule(step, d_model, warmup).
/// Returns the learning rate used.
double optimizer_step(Parameters& params, const GradientSet& grads, AdamState& state, const OptimizerConfig& opt);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t warmup_steps = 1000;
  double lr_factor = 1.0;
  /// Rescale gradients whose global L2 norm exceeds this; 0 disables clipping.
  double clip_norm = 0.0;
  AdamHyper adam;
  std::uint64_t seed = 0;
  Execution exec = Execution::Parallel;

  void validate() const;

  /// Schedule paired with ModelConfig::small for desk-scale runs of a few
  /// hundred optimizer steps, where a 1000-step warmup would never finish.
  static TrainConfig small();
};

nlohmann::json to_json(const TrainConfig& c);

/// Global L2 norm over every array of a gradient set.
double global_norm(const GradientSet& grads);

/// Scales grads so their global norm is at most max_norm. Returns the norm before clipping.
double clip_gradients(GradientSet& grads, double max_norm);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double seconds = 0.0;
  double learning_rate = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
};

nlohmann::json to_json(const TrainHistory& h);

struct TrainResult {
  Parameters best;  // parameters at the lowest validation loss
  Parameters last;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Token-weighted mean loss over a dataset, without dropout.
double evaluate_loss(const Parameters& params, std::span<const EncodedPair> pairs, std::size_t batch_size,
                     Execution exec = Execution::Parallel);

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const EncodedCorpus& corpus,
                  const EpochCallback& on_epoch = {});

struct SearchSpace {
  std::size_t min_layers = 4;
  std::size_t max_layers = 6;
  std::vector<std::size_t> d_model_choices = {128, 256};
  double min_dropout = 0.1;
  double max_dropout = 0.2;
  std::size_t iterations = 5;
};

struct Trial {
  std::size_t sample_index = 0;
  ModelConfig config;
  double validation_loss = 0.0;
  std::size_t parameter_count = 0;
};

/// Ascending validation loss; ties go to fewer parameters, then sample order.
std::vector<Trial> rank_trials(std::vector<Trial> trials);

using TrialCallback = std::function<void(const Trial&)>;

/// Samples `space.iterations` configurations, trains each with `trial_budget`
/// and ranks them. d_ff follows 4 x d_model; other fields come from `base`.
std::vector<Trial> random_search(const SearchSpace& space, const ModelConfig& base, const TrainConfig& trial_budget,
                                 const EncodedCorpus& corpus, std::uint64_t seed, const TrialCallback& on_trial = {});

nlohmann::json to_json(std::span<const Trial> ranked);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_array;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::pair<std::string, double>> per_array;  // max relative error per array
};

/// Central differences over every scalar parameter, compared with loss_and_grads.
/// relative error = |a - n| / max(|a|, |n|, 1e-8). Requires fewer than 10^4
/// parameters and epsilon > 0. With training set, the same dropout stream is
/// replayed for every evaluation.
GradientCheckReport gradient_check(const Parameters& params, const Batch& batch, double epsilon, bool training = false,
                                   std::uint64_t dropout_seed = 0);

}  // namespace p2c::train
