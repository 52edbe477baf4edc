#include <cmath>
#include <random>

#include "doctest.h"
#include "metric_oracles.hpp"
#include "p2c/cppast.hpp"
#include "p2c/errors.hpp"
#include "p2c/metrics.hpp"
#include "test_util.hpp"

using namespace p2c;
using namespace p2c::metrics;
using p2c::testing::Toks;

namespace {

Toks words(const std::string& s) {
  Toks out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

const char* kProgram = R"(#include <iostream>
using namespace std;
int main() {
  int n, s = 0;
  cin >> n;
  for (int i = 1; i <= n; i++) {
    s += i;
  }
  cout << s << endl;
  return 0;
}
)";

}  // namespace

TEST_CASE("ngram precision examples") {
  CHECK(ngram_precision(words("a a a"), words("a"), 1) == doctest::Approx(1.0 / 3));
  CHECK(ngram_precision(words("a b"), words("c d"), 1) == 0.0);
  const auto seq = words("int a = b + 1 ;");
  for (std::size_t n = 1; n <= seq.size(); ++n) CHECK(ngram_precision(seq, seq, n) == 1.0);
}

TEST_CASE("bleu examples") {
  const auto seq = words("int a = b + 1 ;");
  CHECK(bleu(seq, seq) == doctest::Approx(1.0));
  CHECK(bleu(words("a b c d"), words("a b c d e")) == doctest::Approx(std::exp(-0.25)).epsilon(1e-12));
  CHECK(std::exp(-0.25) == doctest::Approx(0.7788).epsilon(1e-4));
  CHECK(bleu({}, seq) == 0.0);
  // fewer than four tokens means no 4-gram, so p_4 = 0
  CHECK(bleu(words("a b c"), words("a b c")) == 0.0);
}

TEST_CASE("ngram match averages over the orders present in the reference") {
  const auto seq = words("int a ;");
  CHECK(ngram_match(seq, seq) == doctest::Approx(1.0));
  // unigrams 2/3, bigrams 0/2, trigrams 0/1: the reference has three orders
  CHECK(ngram_match(words("int a ;"), words("int b ;")) == doctest::Approx((2.0 / 3 + 0.0 + 0.0) / 3));
  // two-token reference: only n = 1, 2 present
  CHECK(ngram_match(words("int a"), words("int b")) == doctest::Approx((1.0 / 2 + 0.0) / 2));
  CHECK(ngram_match({}, seq) == 0.0);
}

TEST_CASE("weighted n-gram match keyword boost") {
  MetricWeights unigram_only;
  unigram_only.ngram = {1.0, 0.0, 0.0, 0.0};
  CHECK(weighted_ngram_match(words("float a ;"), words("int a ;"), unigram_only) == doctest::Approx(2.0 / 7));
  const auto seq = words("for ( int i = 0 ; i < n ; i ++ )");
  CHECK(weighted_ngram_match(seq, seq) == doctest::Approx(1.0));
}

TEST_CASE("similarity is the LCS ratio") {
  CHECK(similarity_score(words("a b"), words("a c")) == doctest::Approx(0.5));
  CHECK(similarity_score(words("a b"), words("a b")) == 1.0);
  CHECK(similarity_score(words("a b"), words("c d")) == 0.0);
  CHECK(similarity_score({}, {}) == 1.0);
}

TEST_CASE("syntax match") {
  CHECK(syntax_match(kProgram, kProgram) == 1.0);
  CHECK(syntax_match(testing::alpha_rename(kProgram), kProgram) == 1.0);
  CHECK(syntax_match("", kProgram) == 0.0);
  const double partial = syntax_match("int main() { int n; cin >> n; }", kProgram);
  CHECK(partial > 0.0);
  CHECK(partial < 1.0);
}

TEST_CASE("dataflow match") {
  CHECK(dataflow_match(kProgram, kProgram) == 1.0);
  CHECK(dataflow_match(testing::alpha_rename(kProgram), kProgram) == 1.0);
  CHECK_FALSE(dataflow_match(kProgram, "int main() { cout << 1; }").has_value());
  CHECK(*dataflow_match("int main() { }", kProgram) == 0.0);
}

TEST_CASE("codebleu combination") {
  CHECK(combine(0.865, 0.849, 0.8519, 0.8981) == doctest::Approx(0.8660).epsilon(0.001 / 0.866));
  CHECK(std::abs(combine(0.865, 0.849, 0.8519, 0.8981) - 0.8659) <= 0.001);
  CHECK(combine(0, 0, 0, 0.0) == 0.0);
  CHECK(combine(1, 1, 1, 1.0) == doctest::Approx(1.0));
  CHECK(combine(0.3, 0.6, 0.9, std::nullopt) == doctest::Approx(0.6));
  CHECK(codebleu(kProgram, kProgram) == doctest::Approx(1.0));
  const auto p = score_pair("int main() { int x; cin >> x; cout << x * 2; }", kProgram);
  REQUIRE(p.dataflow.has_value());
  CHECK(p.codebleu == doctest::Approx((p.bleu + p.weighted_ngram + p.syntax + *p.dataflow) / 4));
}

TEST_CASE("codebleu renormalizes when the reference has no dataflow") {
  const std::string ref = "int main() { cout << 1 << endl; return 0; }";
  const auto p = score_pair("int main() { cout << 2 << endl; return 0; }", ref);
  CHECK_FALSE(p.dataflow.has_value());
  CHECK(p.codebleu == doctest::Approx((p.bleu + p.weighted_ngram + p.syntax) / 3));
}

TEST_CASE("bleu agrees with the brute-force evaluator") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 500; ++i) {
    const auto ref = testing::random_tokens(rng, 25);
    const auto cand = rng() % 2 ? testing::mutate(rng, ref) : testing::random_tokens(rng, 25);
    CHECK(std::abs(bleu(cand, ref) - testing::brute_bleu(cand, ref)) < 1e-6);
    for (std::size_t n = 1; n <= 4; ++n) {
      CHECK(std::abs(ngram_precision(cand, ref, n) - testing::brute_precision(cand, ref, n)) < 1e-12);
    }
  }
}

TEST_CASE("metric ranges, identity and boost-one equality") {
  std::mt19937_64 rng(4);
  MetricWeights flat;
  flat.keyword_boost = 1.0;
  for (int i = 0; i < 1000; ++i) {
    const auto ref = testing::random_tokens(rng, 20);
    const auto cand = rng() % 2 ? testing::mutate(rng, ref) : testing::random_tokens(rng, 20);
    for (double v : {bleu(cand, ref), ngram_match(cand, ref), weighted_ngram_match(cand, ref),
                     similarity_score(cand, ref)}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(weighted_ngram_match(cand, ref, flat) == ngram_match(cand, ref));
    if (!ref.empty()) {
      CHECK(ngram_match(ref, ref) == doctest::Approx(1.0));
      CHECK(weighted_ngram_match(ref, ref) == doctest::Approx(1.0));
      CHECK(similarity_score(ref, ref) == 1.0);
    }
    if (ref.size() >= 4) CHECK(bleu(ref, ref) == doctest::Approx(1.0));
  }
}

TEST_CASE("metrics are reference-directed") {
  const auto short_seq = words("int a = 1 ;");
  const auto long_seq = words("int a = 1 ; int b = 2 ;");
  CHECK(ngram_precision(short_seq, long_seq, 1) == 1.0);
  CHECK(ngram_precision(long_seq, short_seq, 1) < 1.0);
  CHECK(ngram_match(short_seq, long_seq) != ngram_match(long_seq, short_seq));
  CHECK(bleu(short_seq, long_seq) != bleu(long_seq, short_seq));
  const std::string small = "int main() { int a; cin >> a; }";
  CHECK(syntax_match(small, kProgram) != syntax_match(kProgram, small));
}

TEST_CASE("corpus evaluate") {
  std::vector<EvalPair> pairs;
  for (const auto& name : testing::table3_names()) {
    pairs.push_back({name, testing::table3(name), testing::table3(name)});
  }
  const auto same = corpus_evaluate(pairs);
  CHECK(same.means.bleu == doctest::Approx(1.0));
  CHECK(same.means.ngram == doctest::Approx(1.0));
  CHECK(same.means.weighted_ngram == doctest::Approx(1.0));
  CHECK(same.means.syntax == doctest::Approx(1.0));
  CHECK(same.means.similarity == doctest::Approx(1.0));
  CHECK(same.means.codebleu == doctest::Approx(1.0));
  REQUIRE(same.means.dataflow.has_value());
  CHECK(*same.means.dataflow == doctest::Approx(1.0));

  // candidates rotated against references
  std::vector<EvalPair> mixed = pairs;
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i].candidate = pairs[(i + 1) % pairs.size()].reference;
  const auto serial = corpus_evaluate(mixed, {}, Execution::Serial);
  const auto parallel = corpus_evaluate(mixed, {}, Execution::Parallel);
  CHECK(to_json(serial).dump() == to_json(parallel).dump());
  CHECK(serial.parse_recoveries > 0);

  const auto one = corpus_evaluate(std::span(mixed).subspan(0, 1));
  CHECK(one.means.bleu == one.pairs[0].bleu);
  CHECK(one.means.codebleu == one.pairs[0].codebleu);
}

TEST_CASE("corpus evaluate rejects mismatched lists") {
  const std::vector<std::string> c = {"int a;", "int b;"};
  const std::vector<std::string> r = {"int a;"};
  CHECK_THROWS_AS(corpus_evaluate(c, r), LengthMismatch);
}

TEST_CASE("report JSON schema") {
  const std::vector<std::string> c = {kProgram, "int main() { cout << 1; }"};
  const std::vector<std::string> r = {kProgram, "int main() { cout << 2; }"};
  const auto j = to_json(corpus_evaluate(c, r));
  REQUIRE(j["pairs"].size() == 2);
  for (const auto& p : j["pairs"]) {
    for (const char* key : {"id", "similarity", "bleu", "ngram", "weighted_ngram", "syntax", "dataflow", "codebleu"}) {
      CHECK(p.contains(key));
    }
  }
  CHECK(j["pairs"][1]["dataflow"].is_null());
  CHECK(j["pairs"][0]["dataflow"].is_number());
  for (const char* key : {"similarity", "bleu", "ngram", "weighted_ngram", "syntax", "dataflow", "codebleu"}) {
    CHECK(j["means"].contains(key));
  }
  CHECK(j["diagnostics"]["parse_recoveries"].is_number_unsigned());
}

TEST_CASE("table layout lists every metric") {
  const std::vector<std::string> c = {kProgram};
  const auto table = format_table(corpus_evaluate(c, c));
  for (const char* label : {"BLEU", "Syntax", "Dataflow", "CodeBLEU", "Similarity Score*"}) {
    CHECK(table.find(label) != std::string::npos);
  }
}

TEST_CASE("weights validation and JSON round trip") {
  MetricWeights w;
  CHECK_NOTHROW(w.validate());
  w.alpha = 0.5;
  CHECK_THROWS_AS(w.validate(), InputError);
  w = {};
  w.ngram = {0.5, 0.5, 0.5, -0.5};
  CHECK_THROWS_AS(w.validate(), InputError);
  w = {};
  w.keyword_boost = 0.5;
  CHECK_THROWS_AS(w.validate(), InputError);
  w = {};
  w.alpha = 0.4;
  w.beta = 0.1;
  const auto back = metric_weights_from_json(to_json(w));
  CHECK(back.alpha == 0.4);
  CHECK(back.beta == 0.1);
  CHECK_THROWS_AS(metric_weights_from_json(nlohmann::json{{"alpha", 2.0}}), InputError);
}
