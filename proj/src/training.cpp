#include "p2c/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>

#include "p2c/errors.hpp"
#include "p2c/kernels.hpp"
#include "p2c/random.hpp"

namespace p2c::train {

std::vector<EncodedPair> encode_pairs(std::span<const dataset::ProgramPair> pairs, const tok::Vocabulary& src_vocab,
                                      const tok::Vocabulary& tgt_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({tok::encode(src_vocab, p.pseudocode, tok::Side::Source).ids,
                   tok::encode(tgt_vocab, p.code, tok::Side::Target).ids});
  }
  return out;
}

Batch make_batch(std::span<const EncodedPair> pairs) {
  Batch b;
  std::size_t src_len = 0, tgt_len = 0;
  for (const auto& p : pairs) {
    if (p.tgt.size() < 2) throw InputError("target sequence needs START and END");
    src_len = std::max(src_len, p.src.size());
    tgt_len = std::max(tgt_len, p.tgt.size() - 1);
  }
  for (const auto& p : pairs) {
    Ids src = p.src;
    src.resize(src_len, tok::kPad);
    Ids in(p.tgt.begin(), p.tgt.end() - 1);
    Ids out(p.tgt.begin() + 1, p.tgt.end());
    b.target_tokens += out.size();
    in.resize(tgt_len, tok::kPad);
    out.resize(tgt_len, tok::kPad);
    b.src.push_back(std::move(src));
    b.tgt_in.push_back(std::move(in));
    b.tgt_out.push_back(std::move(out));
  }
  return b;
}

double sparse_ce_loss(std::span<const Matrix> logits, std::span<const Ids> targets,
                      std::span<const std::vector<unsigned char>> pad_mask) {
  if (logits.size() != targets.size() || logits.size() != pad_mask.size()) {
    throw ShapeMismatch("sparse_ce_loss: batch sizes differ");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    const Matrix& l = logits[b];
    if (targets[b].size() != l.rows() || pad_mask[b].size() != l.rows()) {
      throw ShapeMismatch("sparse_ce_loss: sequence lengths differ");
    }
    for (std::size_t r = 0; r < l.rows(); ++r) {
      if (pad_mask[b][r]) continue;
      const auto target = targets[b][r];
      if (target < 0 || static_cast<std::size_t>(target) >= l.cols()) throw UnknownId("target id out of range");
      auto row = l.row(r);
      const double peak = *std::max_element(row.begin(), row.end());
      double sum = 0.0;
      for (double x : row) sum += std::exp(x - peak);
      total += peak + std::log(sum) - row[static_cast<std::size_t>(target)];
      ++count;
    }
  }
  if (count == 0) throw AllPositionsMasked("every target position is masked");
  return total / static_cast<double>(count);
}

namespace {

void add_into(GradientSet& dst, const GradientSet& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto d = dst[i].values();
    auto s = src[i].values();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
  }
}

void zero(GradientSet& g) {
  for (auto& m : g) m.fill(0.0);
}

// Runs fn(sample, slot) over the batch in chunks of `width` samples; slots
// index per-worker scratch. Chunk results are folded by the caller in order.
template <class Fn, class Fold>
void for_each_sample(std::size_t n, std::size_t width, Execution exec, Fn&& fn, Fold&& fold) {
  for (std::size_t start = 0; start < n; start += width) {
    const std::size_t count = std::min(width, n - start);
    if (exec == Execution::Parallel && count > 1) {
      std::exception_ptr error;
      const auto c = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static, 1)
      for (std::ptrdiff_t i = 0; i < c; ++i) {
        try {
          fn(start + static_cast<std::size_t>(i), static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(p2c_sample_error)
          if (!error) error = std::current_exception();
        }
      }
      if (error) std::rethrow_exception(error);
    } else {
      for (std::size_t i = 0; i < count; ++i) fn(start + i, i);
    }
    for (std::size_t i = 0; i < count; ++i) fold(i);
  }
}

std::size_t worker_width(Execution exec) {
  return exec == Execution::Parallel ? static_cast<std::size_t>(std::max(1, kernels::max_threads())) : 1;
}

}  // namespace

LossAndGrads loss_and_grads(const Parameters& params, const Batch& batch, bool training, std::uint64_t dropout_seed,
                            Execution exec) {
  if (batch.target_tokens == 0) throw AllPositionsMasked("batch has no target tokens");
  const double normalizer = static_cast<double>(batch.target_tokens);
  LossAndGrads result;
  result.grads = params.zeros_like();
  const std::size_t width = std::min(worker_width(exec), std::max<std::size_t>(1, batch.size()));
  std::vector<GradientSet> scratch(width, params.zeros_like());
  std::vector<double> losses(width);

  for_each_sample(
      batch.size(), width, exec,
      [&](std::size_t b, std::size_t slot) {
        zero(scratch[slot]);
        ad::Tape tape(params.arrays(), &scratch[slot]);
        Rng rng(derive_seed(dropout_seed, b));
        const auto logits = model::forward_sample(tape, params, batch.src[b], batch.tgt_in[b], training, &rng);
        const auto loss = ad::cross_entropy(tape, logits, batch.tgt_out[b], normalizer, tok::kPad);
        losses[slot] = tape.value(loss)(0, 0);
        tape.backward(loss);
      },
      [&](std::size_t slot) {
        result.loss += losses[slot];
        add_into(result.grads, scratch[slot]);
      });
  return result;
}

double batch_loss(const Parameters& params, const Batch& batch, bool training, std::uint64_t dropout_seed,
                  Execution exec) {
  if (batch.target_tokens == 0) throw AllPositionsMasked("batch has no target tokens");
  const double normalizer = static_cast<double>(batch.target_tokens);
  const std::size_t width = std::min(worker_width(exec), std::max<std::size_t>(1, batch.size()));
  std::vector<double> losses(width);
  double total = 0.0;
  for_each_sample(
      batch.size(), width, exec,
      [&](std::size_t b, std::size_t slot) {
        ad::Tape tape(params.arrays(), nullptr);
        Rng rng(derive_seed(dropout_seed, b));
        const auto logits = model::forward_sample(tape, params, batch.src[b], batch.tgt_in[b], training, &rng);
        losses[slot] = tape.value(ad::cross_entropy(tape, logits, batch.tgt_out[b], normalizer, tok::kPad))(0, 0);
      },
      [&](std::size_t slot) { total += losses[slot]; });
  return total;
}

double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup) {
  if (step < 1) throw InputError("lr_schedule: step must be >= 1");
  if (warmup < 1) throw InputError("lr_schedule: warmup must be >= 1");
  const auto s = static_cast<double>(step);
  const auto w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

AdamState make_adam_state(const Parameters& params) { return {params.zeros_like(), params.zeros_like(), 0}; }

void adam_update(std::vector<Matrix>& params, const GradientSet& grads, AdamState& state, double lr,
                 const AdamHyper& hyper) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeMismatch("adam_update: array counts differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(params[i])) throw ShapeMismatch("adam_update: gradient shape differs");
    for (double g : grads[i].values()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in array " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

double optimizer_step(Parameters& params, const GradientSet& grads, AdamState& state, const OptimizerConfig& opt) {
  const double lr = opt.lr_factor * lr_schedule(state.step + 1, params.config().d_model, opt.warmup_steps);
  adam_update(params.arrays(), grads, state, lr, opt.adam);
  return lr;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (warmup_steps < 1) throw InputError("warmup_steps must be >= 1");
  if (!(lr_factor > 0.0)) throw InputError("lr_factor must be positive");
  if (!(clip_norm >= 0.0)) throw InputError("clip_norm must be non-negative");
}

TrainConfig TrainConfig::small() {
  TrainConfig c;
  c.warmup_steps = 40;
  c.lr_factor = 0.4;
  c.clip_norm = 1.0;
  return c;
}

double global_norm(const GradientSet& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g.values()) sq += x * x;
  }
  return std::sqrt(sq);
}

double clip_gradients(GradientSet& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g.values()) x *= scale;
    }
  }
  return norm;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"warmup_steps", c.warmup_steps},
          {"lr_factor", c.lr_factor},
          {"clip_norm", c.clip_norm},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.lr_factor = j.value("lr_factor", c.lr_factor);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  return c;
}

nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"validation_loss", e.validation_loss},
                      {"seconds", e.seconds},
                      {"learning_rate", e.learning_rate}});
  }
  return {{"epochs", epochs}, {"best_epoch", h.best_epoch}, {"best_validation_loss", h.best_validation_loss}};
}

double evaluate_loss(const Parameters& params, std::span<const EncodedPair> pairs, std::size_t batch_size,
                     Execution exec) {
  double weighted = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const auto batch = make_batch(pairs.subspan(start, std::min(batch_size, pairs.size() - start)));
    weighted += batch_loss(params, batch, false, 0, exec) * static_cast<double>(batch.target_tokens);
    tokens += batch.target_tokens;
  }
  if (tokens == 0) throw AllPositionsMasked("no target tokens to evaluate");
  return weighted / static_cast<double>(tokens);
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& tc, const EncodedCorpus& corpus,
                  const EpochCallback& on_epoch) {
  tc.validate();
  if (corpus.train.empty() || corpus.validation.empty()) {
    throw InputError("training needs non-empty train and validation sets");
  }
  Parameters params = model::init_params(model_config);
  AdamState state = make_adam_state(params);
  const OptimizerConfig opt{tc.adam, tc.warmup_steps, tc.lr_factor};
  Rng rng(tc.seed);

  std::vector<std::size_t> order(corpus.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{params, params, {}};
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double weighted = 0.0;
    std::size_t tokens = 0;
    double lr = 0.0;
    std::vector<EncodedPair> chunk;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      chunk.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + tc.batch_size); ++i) {
        chunk.push_back(corpus.train[order[i]]);
      }
      const Batch batch = make_batch(chunk);
      auto lg = loss_and_grads(params, batch, true, rng.next(), tc.exec);
      if (tc.clip_norm > 0.0) clip_gradients(lg.grads, tc.clip_norm);
      lr = optimizer_step(params, lg.grads, state, opt);
      weighted += lg.loss * static_cast<double>(batch.target_tokens);
      tokens += batch.target_tokens;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = weighted / static_cast<double>(tokens);
    rec.validation_loss = evaluate_loss(params, corpus.validation, tc.batch_size, tc.exec);
    rec.learning_rate = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rec.validation_loss < best) {
      best = rec.validation_loss;
      result.best = params;
      result.history.best_epoch = epoch;
      result.history.best_validation_loss = best;
    }
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.last = std::move(params);
  return result;
}

std::vector<Trial> rank_trials(std::vector<Trial> trials) {
  std::sort(trials.begin(), trials.end(), [](const Trial& a, const Trial& b) {
    if (a.validation_loss != b.validation_loss) return a.validation_loss < b.validation_loss;
    if (a.parameter_count != b.parameter_count) return a.parameter_count < b.parameter_count;
    return a.sample_index < b.sample_index;
  });
  return trials;
}

std::vector<Trial> random_search(const SearchSpace& space, const ModelConfig& base, const TrainConfig& trial_budget,
                                 const EncodedCorpus& corpus, std::uint64_t seed, const TrialCallback& on_trial) {
  if (space.iterations < 1) throw InputError("random search needs at least one iteration");
  if (space.min_layers < 1 || space.min_layers > space.max_layers) throw InputError("empty layer range");
  if (space.d_model_choices.empty()) throw InputError("empty d_model choice set");
  if (space.min_dropout > space.max_dropout) throw InputError("empty dropout range");

  Rng rng(seed);
  std::vector<Trial> trials;
  for (std::size_t i = 0; i < space.iterations; ++i) {
    ModelConfig cfg = base;
    cfg.num_layers = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(space.min_layers),
                                                              static_cast<std::int64_t>(space.max_layers)));
    cfg.d_model = space.d_model_choices[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(space.d_model_choices.size()) - 1))];
    cfg.dropout_rate = space.min_dropout == space.max_dropout ? space.min_dropout
                                                              : rng.uniform(space.min_dropout, space.max_dropout);
    cfg.d_ff = 4 * cfg.d_model;
    cfg.seed = derive_seed(seed, i);

    TrainConfig tc = trial_budget;
    tc.seed = derive_seed(seed ^ 0x5EA7C4ULL, i);
    const auto run = train(cfg, tc, corpus);
    Trial trial{i, cfg, run.history.best_validation_loss, run.best.count()};
    if (on_trial) on_trial(trial);
    trials.push_back(trial);
  }
  return rank_trials(std::move(trials));
}

nlohmann::json to_json(std::span<const Trial> ranked) {
  nlohmann::json trials = nlohmann::json::array();
  for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
    const auto& t = ranked[rank];
    trials.push_back({{"rank", rank + 1},
                      {"iteration", t.sample_index + 1},
                      {"num_layers", t.config.num_layers},
                      {"d_model", t.config.d_model},
                      {"dropout_rate", t.config.dropout_rate},
                      {"parameters", t.parameter_count},
                      {"validation_loss", t.validation_loss},
                      {"config", model::to_json(t.config)}});
  }
  return {{"trials", trials}};
}

namespace {
constexpr double kGradientFloor = 1e-5;
}  // namespace

GradientCheckReport gradient_check(const Parameters& params, const Batch& batch, double epsilon, bool training,
                                   std::uint64_t dropout_seed) {
  if (!(epsilon > 0.0)) throw InputError("gradient_check: epsilon must be positive");
  if (params.count() >= 10000) throw InputError("gradient_check: configuration too large (>= 10^4 parameters)");

  const auto analytic = loss_and_grads(params, batch, training, dropout_seed, Execution::Serial).grads;
  Parameters probe = params;
  GradientCheckReport report;
  for (std::size_t a = 0; a < probe.arrays().size(); ++a) {
    auto values = probe.arrays()[a].values();
    auto grad = analytic[a].values();
    double worst = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      auto loss_at = [&](double offset) {
        values[k] = saved + offset;
        return batch_loss(probe, batch, training, dropout_seed, Execution::Serial);
      };
      // five-point central stencil, truncation error O(epsilon^4)
      const double numeric =
          (8.0 * (loss_at(epsilon) - loss_at(-epsilon)) - (loss_at(2.0 * epsilon) - loss_at(-2.0 * epsilon))) /
          (12.0 * epsilon);
      values[k] = saved;
      // The floor absorbs round-off in the difference quotient (about 1e-11 at
      // epsilon 1e-4) for entries whose true gradient is exactly zero.
      const double denom = std::max({std::abs(grad[k]), std::abs(numeric), kGradientFloor});
      const double rel = std::abs(grad[k] - numeric) / denom;
      worst = std::max(worst, rel);
      if (rel > report.max_relative_error || report.worst_array.empty()) {
        report.max_relative_error = rel;
        report.worst_array = std::string(probe.names()[a]);
        report.worst_index = k;
        report.worst_analytic = grad[k];
        report.worst_numeric = numeric;
      }
    }
    report.per_array.emplace_back(std::string(probe.names()[a]), worst);
  }
  return report;
}

}  // namespace p2c::train
