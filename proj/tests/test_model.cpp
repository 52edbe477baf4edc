#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "p2c/errors.hpp"
#include "p2c/model.hpp"
#include "p2c/tokenizer.hpp"

using namespace p2c;
using namespace p2c::model;

namespace {

ModelConfig tiny(std::uint64_t seed = 1) {
  ModelConfig c;
  c.num_layers = 2;
  c.d_model = 16;
  c.num_heads = 4;
  c.d_ff = 32;
  c.dropout_rate = 0.1;
  c.max_positions = 64;
  c.src_vocab = 12;
  c.tgt_vocab = 10;
  c.seed = seed;
  return c;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (auto& x : m.values()) x = u(rng);
  return m;
}

Matrix logits_for(const Parameters& p, const Ids& src, const Ids& tgt) {
  const std::vector<Ids> s = {src}, t = {tgt};
  return forward(p, s, t, false)[0];
}

}  // namespace

TEST_CASE("positional encoding values") {
  const auto pe = positional_encoding(50, 128);
  for (std::size_t c = 0; c < 128; ++c) CHECK(pe(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  CHECK(pe(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  for (double v : pe.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  for (std::size_t pos = 0; pos < 50; ++pos) CHECK(pe(pos, 0) == doctest::Approx(std::sin(static_cast<double>(pos))));
  // 2i/d = 1 would need column d; the slowest pair in use has period 2*pi*10000^((d-2)/d)
  const double period = 2 * std::numbers::pi * std::pow(10000.0, 126.0 / 128.0);
  const auto big = positional_encoding(2, 128);
  CHECK(std::sin(1.0 * 2 * std::numbers::pi / period) == doctest::Approx(big(1, 126)));
  CHECK_THROWS_AS(positional_encoding(4, 7), OddDimension);
  CHECK(positional_encoding(4, 512).cols() == 512);
}

TEST_CASE("positional table at 2048 x 512 spans [-1, 1]") {
  const auto pe = positional_encoding(2048, 512);
  const auto values = pe.values();
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  CHECK(*hi == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(*lo == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("masks") {
  const Ids src = {5, 6, 0, 0};
  const auto m = make_masks(src, Ids{1, 4, 5});
  CHECK(m.source_padding == std::vector<unsigned char>{0, 0, 1, 1});
  const std::vector<unsigned char> causal = {0, 1, 1, 0, 0, 1, 0, 0, 0};
  CHECK(m.target.bits == causal);
  const auto all_pad = make_masks(src, Ids{0, 0});
  for (auto b : all_pad.target.bits) CHECK(b == 1);
}

TEST_CASE("attention examples") {
  Matrix q(2, 1, 1.0), k(3, 1, 0.5), v(3, 2);
  for (std::size_t r = 0; r < 3; ++r) v(r, 0) = static_cast<double>(r);
  auto [out, w] = attention(q, k, v, nullptr);
  for (double x : w.values()) CHECK(x == doctest::Approx(1.0 / 3));

  MaskMatrix only_middle(2, 3, true);
  only_middle.set(0, 1, false);
  only_middle.set(1, 1, false);
  auto [out2, w2] = attention(q, k, v, &only_middle);
  CHECK(w2(0, 1) == 1.0);
  CHECK(out2(1, 0) == 1.0);

  Matrix k2(2, 1);
  k2(0, 0) = 1.0;
  Matrix v2(2, 1);
  auto [out3, w3] = attention(Matrix(1, 1, 1.0), k2, v2, nullptr);
  CHECK(w3(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(w3(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("attention rows sum to one and are key-permutation invariant") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 6;
    const auto q = random_matrix(rng, 3, 4), k = random_matrix(rng, n, 4), v = random_matrix(rng, n, 3);
    MaskMatrix mask(3, n);
    for (auto& b : mask.bits) b = rng() % 3 == 0;
    auto [out, w] = attention(q, k, v, &mask);
    for (std::size_t r = 0; r < 3; ++r) {
      bool any = false;
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        any = any || !mask(r, c);
        s += w(r, c);
      }
      CHECK(s == doctest::Approx(any ? 1.0 : 0.0).epsilon(1e-6));
    }
    // reversing keys, values and mask columns leaves the output unchanged
    Matrix kr(n, 4), vr(n, 3);
    MaskMatrix mr(3, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 4; ++c) kr(i, c) = k(n - 1 - i, c);
      for (std::size_t c = 0; c < 3; ++c) vr(i, c) = v(n - 1 - i, c);
      for (std::size_t r = 0; r < 3; ++r) mr.set(r, i, mask(r, n - 1 - i));
    }
    auto [out_r, w_r] = attention(q, kr, vr, &mr);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.values()[i] == doctest::Approx(out_r.values()[i]));
  }
}

TEST_CASE("init params is seeded") {
  CHECK(init_params(tiny(1)) == init_params(tiny(1)));
  CHECK_FALSE(init_params(tiny(1)) == init_params(tiny(2)));
  for (const auto& a : init_params(tiny()).arrays()) {
    for (double v : a.values()) CHECK(std::isfinite(v));
  }
  const auto p = init_params(tiny());
  CHECK(p.count() > 0);
  CHECK(p.arrays().size() == parameter_specs(tiny()).size());
}

TEST_CASE("config validation") {
  auto c = tiny();
  CHECK_NOTHROW(c.validate());
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = tiny();
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  CHECK(model_config_from_json(to_json(tiny())) == tiny());
}

TEST_CASE("forward is deterministic and causal") {
  const auto p = init_params(tiny());
  const Ids src = {1, 5, 6, 7, 2};
  const Ids tgt = {1, 4, 5, 6, 7};
  const auto a = logits_for(p, src, tgt);
  CHECK(a == logits_for(p, src, tgt));
  CHECK(a.rows() == tgt.size());
  CHECK(a.cols() == 10);
  for (std::size_t t = 0; t + 1 < tgt.size(); ++t) {
    Ids changed = tgt;
    for (std::size_t u = t + 1; u < changed.size(); ++u) changed[u] = 9;
    const auto b = logits_for(p, src, changed);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < a.cols(); ++c) CHECK(b(r, c) == doctest::Approx(a(r, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("source padding does not change the logits") {
  const auto p = init_params(tiny());
  const Ids tgt = {1, 4, 5};
  const auto plain = logits_for(p, {1, 5, 6, 2}, tgt);
  const auto padded = logits_for(p, {1, 5, 6, 2, 0, 0, 0}, tgt);
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain.values()[i] == doctest::Approx(padded.values()[i]));
}

TEST_CASE("batched forward matches per-sample forward in both executions") {
  const auto p = init_params(tiny());
  const std::vector<Ids> src = {{1, 5, 2}, {1, 7, 8, 9, 2}, {1, 2}};
  const std::vector<Ids> tgt = {{1, 4}, {1, 4, 5, 6}, {1}};
  const auto serial = forward(p, src, tgt, true, 42, Execution::Serial);
  const auto parallel = forward(p, src, tgt, true, 42, Execution::Parallel);
  CHECK(serial == parallel);
  const auto eval = forward(p, src, tgt, false);
  CHECK(eval[1] == logits_for(p, src[1], tgt[1]));
  CHECK_FALSE(serial[1] == eval[1]);  // dropout active in training
}

TEST_CASE("sequences longer than the position budget are rejected") {
  auto c = tiny();
  c.max_positions = 4;
  const auto p = init_params(c);
  CHECK_THROWS_AS(logits_for(p, {1, 5, 5, 5, 5, 2}, {1}), SequenceTooLong);
}

TEST_CASE("greedy decoding") {
  auto p = init_params(tiny());
  const Ids src = {1, 5, 6, 2};
  for (std::size_t max_len : {0u, 1u, 5u, 20u}) {
    const auto out = greedy_decode(p, src, max_len);
    CHECK(out.front() == tok::kStart);
    CHECK(out.size() <= max_len + 2);
    CHECK(out == greedy_decode_reference(p, src, max_len));
  }
  // force END to win every argmax
  auto& bias = p.arrays()[p.layout().out_b];
  bias(0, tok::kEnd) = 1e6;
  CHECK(greedy_decode(p, src, 10) == Ids{tok::kStart, tok::kEnd});
}

TEST_CASE("cached decoder agrees with the reference across seeds") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto p = init_params(tiny(seed));
    const Ids src = {1, static_cast<std::int32_t>(4 + seed % 8), 7, 8, 2};
    CHECK(greedy_decode(p, src, 30) == greedy_decode_reference(p, src, 30));
  }
}
