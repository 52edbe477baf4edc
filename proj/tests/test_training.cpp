#include <cmath>
#include <limits>

#include "doctest.h"
#include "p2c/errors.hpp"
#include "p2c/training.hpp"

using namespace p2c;
using namespace p2c::train;

namespace {

ModelConfig tiny(std::size_t layers = 1, double dropout = 0.0) {
  ModelConfig c;
  c.num_layers = layers;
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  c.dropout_rate = dropout;
  c.max_positions = 32;
  c.src_vocab = 20;
  c.tgt_vocab = 20;
  c.seed = 3;
  return c;
}

std::vector<EncodedPair> toy_pairs(std::size_t n) {
  std::vector<EncodedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = static_cast<std::int32_t>(4 + i % 8);
    const auto b = static_cast<std::int32_t>(4 + (i * 3) % 11);
    out.push_back({{1, a, b, 2}, {1, b, a, static_cast<std::int32_t>(4 + i % 5), 2}});
  }
  return out;
}

}  // namespace

TEST_CASE("batch assembly pads and shifts") {
  const std::vector<EncodedPair> pairs = {{{1, 5, 2}, {1, 6, 7, 2}}, {{1, 5, 5, 5, 2}, {1, 2}}};
  const auto b = make_batch(pairs);
  CHECK(b.src[0] == Ids{1, 5, 2, 0, 0});
  CHECK(b.tgt_in[0] == Ids{1, 6, 7});
  CHECK(b.tgt_out[0] == Ids{6, 7, 2});
  CHECK(b.tgt_in[1] == Ids{1, 0, 0});
  CHECK(b.tgt_out[1] == Ids{2, 0, 0});
  CHECK(b.target_tokens == 4);
}

TEST_CASE("sparse cross entropy") {
  const std::vector<Matrix> uniform = {Matrix(3, 4, 0.0)};
  const std::vector<Ids> targets = {{0, 1, 2}};
  const std::vector<std::vector<unsigned char>> none = {{0, 0, 0}};
  CHECK(sparse_ce_loss(uniform, targets, none) == doctest::Approx(std::log(4.0)));
  CHECK(std::log(4.0) == doctest::Approx(1.386294).epsilon(1e-6));

  Matrix sharp(3, 4, -50.0);
  for (std::size_t r = 0; r < 3; ++r) sharp(r, static_cast<std::size_t>(targets[0][r])) = 50.0;
  const std::vector<Matrix> confident = {sharp};
  CHECK(sparse_ce_loss(confident, targets, none) < 1e-12);

  const std::vector<std::vector<unsigned char>> all = {{1, 1, 1}};
  CHECK_THROWS_AS(sparse_ce_loss(uniform, targets, all), AllPositionsMasked);
}

TEST_CASE("learning rate schedule") {
  CHECK(lr_schedule(1000, 128, 1000) == doctest::Approx(std::pow(128.0, -0.5) * std::pow(1000.0, -0.5)));
  CHECK(lr_schedule(1000, 128, 1000) == doctest::Approx(2.795e-3).epsilon(1e-3));
  CHECK(lr_schedule(1, 128, 1000) == doctest::Approx(std::pow(128.0, -0.5) * std::pow(1000.0, -1.5)));
  CHECK(lr_schedule(4000, 128, 1000) < lr_schedule(1000, 128, 1000));
  CHECK(lr_schedule(500, 128, 1000) < lr_schedule(1000, 128, 1000));
  CHECK_THROWS_AS(lr_schedule(0, 128, 1000), InputError);
}

TEST_CASE("adam follows the hand recursion") {
  std::vector<Matrix> p = {Matrix(1, 1, 0.5)};
  AdamState s{{Matrix(1, 1)}, {Matrix(1, 1)}, 0};
  const AdamHyper h;
  double x = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -1.2, 0.05, 2.0, -0.7};
  for (std::size_t t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    const double lr = 0.01 * static_cast<double>(t);
    adam_update(p, {Matrix(1, 1, g)}, s, lr, h);
    m = 0.9 * m + 0.1 * g;
    v = 0.98 * v + 0.02 * g * g;
    const double m_hat = m / (1 - std::pow(0.9, static_cast<double>(t)));
    const double v_hat = v / (1 - std::pow(0.98, static_cast<double>(t)));
    x -= lr * m_hat / (std::sqrt(v_hat) + 1e-9);
    CHECK(p[0](0, 0) == doctest::Approx(x).epsilon(1e-14));
  }
  CHECK(s.step == 5);
}

TEST_CASE("adam edge cases") {
  std::vector<Matrix> p = {Matrix(2, 2, 1.5)};
  AdamState s{{Matrix(2, 2)}, {Matrix(2, 2)}, 0};
  adam_update(p, {Matrix(2, 2, 0.0)}, s, 0.1);
  CHECK(p[0] == Matrix(2, 2, 1.5));

  Matrix bad(2, 2, 0.0);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  const auto before = p;
  CHECK_THROWS_AS(adam_update(p, {bad}, s, 0.1), NonFiniteGradient);
  CHECK(p == before);
  CHECK(s.step == 1);
}

TEST_CASE("gradient check on tiny configurations") {
  const auto pairs = toy_pairs(2);
  const auto batch = make_batch(pairs);
  SUBCASE("one layer") {
    const auto r = gradient_check(model::init_params(tiny()), batch, 1e-4);
    INFO(r.worst_array << "[" << r.worst_index << "] " << r.worst_analytic << " vs " << r.worst_numeric);
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("linear degenerate model") {
    auto c = tiny();
    c.activation = model::Activation::Linear;
    CHECK(gradient_check(model::init_params(c), batch, 1e-4).max_relative_error < 1e-6);
  }
  SUBCASE("dropout replayed") {
    const auto r = gradient_check(model::init_params(tiny(1, 0.2)), batch, 1e-4, true, 77);
    CHECK(r.max_relative_error < 1e-4);
  }
  CHECK_THROWS_AS(gradient_check(model::init_params(tiny()), batch, 0.0), InputError);
}

TEST_CASE("gradients are deterministic and execution independent") {
  const auto params = model::init_params(tiny(2, 0.1));
  const auto batch = make_batch(toy_pairs(5));
  const auto a = loss_and_grads(params, batch, true, 9, model::Execution::Serial);
  const auto b = loss_and_grads(params, batch, true, 9, model::Execution::Serial);
  const auto c = loss_and_grads(params, batch, true, 9, model::Execution::Parallel);
  CHECK(a.loss == b.loss);
  CHECK(a.grads == b.grads);
  CHECK(a.loss == c.loss);
  CHECK(a.grads == c.grads);
  CHECK(batch_loss(params, batch, true, 9) == a.loss);
}

TEST_CASE("training loss decreases and history is consistent") {
  EncodedCorpus corpus{toy_pairs(12), toy_pairs(3)};
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 4;
  tc.warmup_steps = 10;
  std::size_t calls = 0;
  const auto r = train::train(tiny(), tc, corpus, [&](const EpochRecord&) { ++calls; });
  REQUIRE(r.history.epochs.size() == 6);
  CHECK(calls == 6);
  for (std::size_t e = 1; e < 3; ++e) CHECK(r.history.epochs[e].train_loss < r.history.epochs[e - 1].train_loss);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.history.epochs) best = std::min(best, e.validation_loss);
  CHECK(r.history.best_validation_loss == best);
  CHECK(evaluate_loss(r.best, corpus.validation, 4) == doctest::Approx(best));

  tc.exec = model::Execution::Serial;
  const auto serial = train::train(tiny(), tc, corpus);
  CHECK(serial.last == r.last);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), InputError);
  tc = {};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), InputError);
  tc = {};
  tc.warmup_steps = 0;
  CHECK_THROWS_AS(tc.validate(), InputError);
  EncodedCorpus empty;
  CHECK_THROWS_AS(train::train(tiny(), TrainConfig{}, empty), InputError);
  tc = {};
  tc.lr_factor = 0.5;
  CHECK(train_config_from_json(to_json(tc)).lr_factor == 0.5);
}

TEST_CASE("trial ranking tie-breaks") {
  Trial four{0, tiny(4), 1.0, 400};
  Trial six{1, tiny(6), 1.0, 600};
  Trial better{2, tiny(6), 0.5, 600};
  const auto ranked = rank_trials({six, four, better});
  CHECK(ranked[0].sample_index == 2);
  CHECK(ranked[1].config.num_layers == 4);
  CHECK(ranked[2].config.num_layers == 6);
}

TEST_CASE("random search") {
  EncodedCorpus corpus{toy_pairs(6), toy_pairs(2)};
  TrainConfig budget;
  budget.epochs = 1;
  budget.batch_size = 4;
  budget.warmup_steps = 5;
  auto base = tiny();

  SearchSpace single;
  single.min_layers = single.max_layers = 1;
  single.d_model_choices = {8};
  single.min_dropout = single.max_dropout = 0.0;
  single.iterations = 1;
  const auto one = random_search(single, base, budget, corpus, 4);
  REQUIRE(one.size() == 1);
  CHECK(one[0].config.num_layers == 1);
  CHECK(one[0].config.d_model == 8);

  SearchSpace five = single;
  five.max_layers = 2;
  five.max_dropout = 0.2;
  five.iterations = 5;
  const auto ranked = random_search(five, base, budget, corpus, 4);
  REQUIRE(ranked.size() == 5);
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].validation_loss <= ranked[i].validation_loss);
  const auto again = random_search(five, base, budget, corpus, 4);
  CHECK(to_json(again).dump() == to_json(ranked).dump());
  CHECK(to_json(ranked)["trials"].size() == 5);

  five.iterations = 0;
  CHECK_THROWS_AS(random_search(five, base, budget, corpus, 4), InputError);
}

TEST_CASE("gradient clipping bounds the global norm") {
  GradientSet g = {Matrix(1, 2, 3.0), Matrix(1, 1, 4.0)};
  CHECK(global_norm(g) == doctest::Approx(std::sqrt(9.0 + 9.0 + 16.0)));
  const double before = clip_gradients(g, 1.0);
  CHECK(before == doctest::Approx(std::sqrt(34.0)));
  CHECK(global_norm(g) == doctest::Approx(1.0));
  CHECK(g[1](0, 0) / g[0](0, 0) == doctest::Approx(4.0 / 3.0));
  GradientSet small = {Matrix(1, 1, 0.1)};
  clip_gradients(small, 1.0);
  CHECK(small[0](0, 0) == 0.1);
}
