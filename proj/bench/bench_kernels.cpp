// Serial reference versus OpenMP variants of the hot paths.
//   ./build/p2c_bench --benchmark_filter=Matmul
// Set OMP_NUM_THREADS to control the parallel side.

#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "p2c/kernels.hpp"
#include "p2c/metrics.hpp"
#include "p2c/model.hpp"
#include "p2c/training.hpp"

using namespace p2c;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

template <auto Kernel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  Matrix c(n, n);
  for (auto _ : state) {
    Kernel(a, b, c, kernels::Accumulate::No);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

BENCHMARK_TEMPLATE(BM_Matmul, kernels::serial::matmul)->Name("Matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_TEMPLATE(BM_Matmul, kernels::parallel::matmul)->Name("Matmul/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_TEMPLATE(BM_Matmul, kernels::serial::matmul_a_bt)->Name("MatmulABt/serial")->Arg(128);
BENCHMARK_TEMPLATE(BM_Matmul, kernels::parallel::matmul_a_bt)->Name("MatmulABt/parallel")->Arg(128);
BENCHMARK_TEMPLATE(BM_Matmul, kernels::serial::matmul_at_b)->Name("MatmulAtB/serial")->Arg(128);
BENCHMARK_TEMPLATE(BM_Matmul, kernels::parallel::matmul_at_b)->Name("MatmulAtB/parallel")->Arg(128);

train::Batch random_batch(std::size_t samples, std::size_t vocab, std::size_t len) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int32_t> tok(4, static_cast<std::int32_t>(vocab) - 1);
  std::vector<train::EncodedPair> pairs;
  for (std::size_t i = 0; i < samples; ++i) {
    train::EncodedPair p;
    p.src.push_back(1);
    p.tgt.push_back(1);
    for (std::size_t k = 0; k < len; ++k) p.src.push_back(tok(rng));
    for (std::size_t k = 0; k < len + 4; ++k) p.tgt.push_back(tok(rng));
    p.src.push_back(2);
    p.tgt.push_back(2);
    pairs.push_back(std::move(p));
  }
  return train::make_batch(pairs);
}

void BM_LossAndGrads(benchmark::State& state, model::Execution exec) {
  model::ModelConfig c;
  c.num_layers = 2;
  c.d_model = 64;
  c.num_heads = 4;
  c.d_ff = 256;
  c.dropout_rate = 0.1;
  c.src_vocab = 200;
  c.tgt_vocab = 200;
  c.max_positions = 128;
  const auto params = model::init_params(c);
  const auto batch = random_batch(16, 200, 30);
  for (auto _ : state) {
    auto r = train::loss_and_grads(params, batch, true, 3, exec);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}

BENCHMARK_CAPTURE(BM_LossAndGrads, serial, model::Execution::Serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_LossAndGrads, parallel, model::Execution::Parallel)->Unit(benchmark::kMillisecond);

std::vector<metrics::EvalPair> eval_corpus(std::size_t n) {
  const std::vector<std::string> templates = {
      "int main() {\n  int n;\n  cin >> n;\n  int s = 0;\n  for (int i = 0; i < n; i++) {\n    s += i;\n  }\n"
      "  cout << s << endl;\n  return 0;\n}\n",
      "int main() {\n  int a, b;\n  cin >> a >> b;\n  if (a > b) {\n    cout << a << endl;\n  } else {\n"
      "    cout << b << endl;\n  }\n  return 0;\n}\n",
      "int main() {\n  string s;\n  cin >> s;\n  int c = 0;\n  while (c < 3) {\n    s = s + s;\n    c++;\n  }\n"
      "  cout << s.size() << endl;\n  return 0;\n}\n"};
  std::vector<metrics::EvalPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ref = templates[i % templates.size()];
    const auto& cand = templates[(i / templates.size()) % templates.size()];
    pairs.push_back({std::to_string(i), cand, ref});
  }
  return pairs;
}

void BM_CorpusEvaluate(benchmark::State& state, metrics::Execution exec) {
  const auto pairs = eval_corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto r = metrics::corpus_evaluate(pairs, {}, exec);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK_CAPTURE(BM_CorpusEvaluate, serial, metrics::Execution::Serial)->Arg(300)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_CorpusEvaluate, parallel, metrics::Execution::Parallel)->Arg(300)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
