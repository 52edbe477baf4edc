#include "p2c/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "p2c/cppast.hpp"
#include "p2c/errors.hpp"

namespace p2c::metrics {

namespace {

constexpr std::size_t kMaxOrder = 4;
constexpr double kWeightTolerance = 1e-9;

using NgramCounts = std::unordered_map<std::string, std::size_t>;

std::string ngram_key(std::span<const std::string> tokens, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t k = 0; k < n; ++k) {
    if (k) key += '\x1f';
    key += tokens[start + k];
  }
  return key;
}

NgramCounts count_ngrams(std::span<const std::string> tokens, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[ngram_key(tokens, i, n)];
  return counts;
}

bool has_keyword(std::span<const std::string> tokens, std::size_t start, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    if (cpp::is_keyword(tokens[start + k])) return true;
  }
  return false;
}

/// (weighted matched, weighted total) over reference n-grams of order n.
std::pair<double, double> weighted_overlap(std::span<const std::string> candidate,
                                           std::span<const std::string> reference, std::size_t n, double boost) {
  const NgramCounts cand = count_ngrams(candidate, n);
  NgramCounts ref_seen;
  double matched = 0.0, total = 0.0;
  for (std::size_t i = 0; i + n <= reference.size(); ++i) {
    const auto key = ngram_key(reference, i, n);
    const double w = has_keyword(reference, i, n) ? boost : 1.0;
    total += w;
    // the k-th occurrence of an n-gram in the reference is matched when the
    // candidate has at least k copies (clipping)
    const std::size_t occurrence = ++ref_seen[key];
    const auto it = cand.find(key);
    if (it != cand.end() && occurrence <= it->second) matched += w;
  }
  return {matched, total};
}

struct Parsed {
  cpp::ParseResult parse;
  cpp::SubtreeMultiset subtrees;
  std::map<cpp::EdgeKey, std::size_t> edges;
};

Parsed analyze(std::string_view code) {
  Parsed p;
  p.parse = cpp::parse_cpp(code);
  p.subtrees = cpp::enumerate_subtrees(p.parse.root, 2);
  p.edges = cpp::extract_dataflow(p.parse.root).edge_multiset();
  return p;
}

template <class Map>
std::size_t intersection_size(const Map& reference, const Map& candidate) {
  std::size_t matched = 0;
  for (const auto& [key, count] : reference) {
    const auto it = candidate.find(key);
    if (it != candidate.end()) matched += std::min(count, it->second);
  }
  return matched;
}

double syntax_of(const Parsed& cand, const Parsed& ref) {
  const std::size_t total = cpp::multiset_size(ref.subtrees);
  if (total == 0) return 1.0;
  return static_cast<double>(intersection_size(ref.subtrees, cand.subtrees)) / static_cast<double>(total);
}

std::optional<double> dataflow_of(const Parsed& cand, const Parsed& ref) {
  std::size_t total = 0;
  for (const auto& [key, count] : ref.edges) total += count;
  if (total == 0) return std::nullopt;
  return static_cast<double>(intersection_size(ref.edges, cand.edges)) / static_cast<double>(total);
}

}  // namespace

void MetricWeights::validate() const {
  const std::array<double, 4> parts = {alpha, beta, gamma, delta};
  for (double x : parts) {
    if (!(x >= 0.0)) throw InputError("codebleu weights must be non-negative");
  }
  for (double x : ngram) {
    if (!(x >= 0.0)) throw InputError("n-gram weights must be non-negative");
  }
  if (std::abs(alpha + beta + gamma + delta - 1.0) > kWeightTolerance) {
    throw InputError("codebleu weights must sum to 1");
  }
  if (std::abs(ngram[0] + ngram[1] + ngram[2] + ngram[3] - 1.0) > kWeightTolerance) {
    throw InputError("n-gram weights must sum to 1");
  }
  if (!(keyword_boost >= 1.0)) throw InputError("keyword boost must be at least 1");
}

nlohmann::json to_json(const MetricWeights& w) {
  return {{"alpha", w.alpha},   {"beta", w.beta},   {"gamma", w.gamma},
          {"delta", w.delta},   {"ngram", w.ngram}, {"keyword_boost", w.keyword_boost}};
}

MetricWeights metric_weights_from_json(const nlohmann::json& j) {
  MetricWeights w;
  try {
    w.alpha = j.value("alpha", w.alpha);
    w.beta = j.value("beta", w.beta);
    w.gamma = j.value("gamma", w.gamma);
    w.delta = j.value("delta", w.delta);
    if (j.contains("ngram")) w.ngram = j.at("ngram").get<std::array<double, 4>>();
    w.keyword_boost = j.value("keyword_boost", w.keyword_boost);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad metric weights: ") + e.what());
  }
  w.validate();
  return w;
}

double ngram_precision(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
  if (n == 0) throw InputError("n-gram order must be at least 1");
  if (candidate.size() < n) return 0.0;
  const NgramCounts cand = count_ngrams(candidate, n);
  const NgramCounts ref = count_ngrams(reference, n);
  std::size_t matched = 0;
  for (const auto& [key, count] : cand) {
    const auto it = ref.find(key);
    if (it != ref.end()) matched += std::min(count, it->second);
  }
  return static_cast<double>(matched) / static_cast<double>(candidate.size() - n + 1);
}

double bleu(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty()) return 0.0;
  double product = 1.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const double p = ngram_precision(candidate, reference, n);
    if (p == 0.0) return 0.0;
    product *= p;
  }
  const double ratio = static_cast<double>(reference.size()) / static_cast<double>(candidate.size());
  const double bp = std::min(1.0, std::exp(1.0 - ratio));
  return bp * std::pow(product, 1.0 / static_cast<double>(kMaxOrder));
}

double ngram_match(std::span<const std::string> candidate, std::span<const std::string> reference) {
  double sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 1; n <= kMaxOrder && n <= reference.size(); ++n) {
    const auto [matched, total] = weighted_overlap(candidate, reference, n, 1.0);
    sum += matched / total;
    ++orders;
  }
  return orders ? sum / static_cast<double>(orders) : 0.0;
}

double weighted_ngram_match(std::span<const std::string> candidate, std::span<const std::string> reference,
                            const MetricWeights& weights) {
  double sum = 0.0, weight_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder && n <= reference.size(); ++n) {
    const auto [matched, total] = weighted_overlap(candidate, reference, n, weights.keyword_boost);
    sum += weights.ngram[n - 1] * (matched / total);
    weight_sum += weights.ngram[n - 1];
  }
  return weight_sum > 0.0 ? sum / weight_sum : 0.0;
}

double syntax_match(std::string_view candidate_code, std::string_view reference_code) {
  return syntax_of(analyze(candidate_code), analyze(reference_code));
}

std::optional<double> dataflow_match(std::string_view candidate_code, std::string_view reference_code) {
  return dataflow_of(analyze(candidate_code), analyze(reference_code));
}

double similarity_score(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() && reference.empty()) return 1.0;
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (std::size_t i = 1; i <= candidate.size(); ++i) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[reference.size()]);
  return 2.0 * lcs / static_cast<double>(candidate.size() + reference.size());
}

double combine(double bleu_score, double weighted_ngram, double syntax, std::optional<double> dataflow,
               const MetricWeights& weights) {
  if (dataflow) {
    return weights.alpha * bleu_score + weights.beta * weighted_ngram + weights.gamma * syntax +
           weights.delta * *dataflow;
  }
  const double rest = weights.alpha + weights.beta + weights.gamma;
  if (rest <= 0.0) return 0.0;
  return (weights.alpha * bleu_score + weights.beta * weighted_ngram + weights.gamma * syntax) / rest;
}

PairScores score_pair(std::string_view candidate_code, std::string_view reference_code, const MetricWeights& weights) {
  const Tokens cand = cpp::code_tokens(candidate_code);
  const Tokens ref = cpp::code_tokens(reference_code);
  const Parsed pc = analyze(candidate_code);
  const Parsed pr = analyze(reference_code);
  PairScores s;
  s.similarity = similarity_score(cand, ref);
  s.bleu = bleu(cand, ref);
  s.ngram = ngram_match(cand, ref);
  s.weighted_ngram = weighted_ngram_match(cand, ref, weights);
  s.syntax = syntax_of(pc, pr);
  s.dataflow = dataflow_of(pc, pr);
  s.codebleu = combine(s.bleu, s.weighted_ngram, s.syntax, s.dataflow, weights);
  s.parse_recoveries = pc.parse.diagnostics.size() + pr.parse.diagnostics.size();
  return s;
}

double codebleu(std::string_view candidate_code, std::string_view reference_code, const MetricWeights& weights) {
  return score_pair(candidate_code, reference_code, weights).codebleu;
}

MetricReport corpus_evaluate(std::span<const EvalPair> pairs, const MetricWeights& weights, Execution exec) {
  weights.validate();
  MetricReport report;
  report.pairs.resize(pairs.size());
  const long n = static_cast<long>(pairs.size());
  std::exception_ptr failure;
  auto score = [&](long i) {
    auto s = score_pair(pairs[i].candidate, pairs[i].reference, weights);
    s.id = pairs[i].id;
    report.pairs[i] = std::move(s);
  };
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
      try {
        score(i);
      } catch (...) {
#pragma omp critical(p2c_metrics_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (long i = 0; i < n; ++i) score(i);
  }

  // means are accumulated in pair order so the result is independent of scheduling
  MetricMeans& m = report.means;
  double dataflow_sum = 0.0;
  std::size_t dataflow_count = 0;
  for (const auto& p : report.pairs) {
    m.similarity += p.similarity;
    m.bleu += p.bleu;
    m.ngram += p.ngram;
    m.weighted_ngram += p.weighted_ngram;
    m.syntax += p.syntax;
    m.codebleu += p.codebleu;
    if (p.dataflow) {
      dataflow_sum += *p.dataflow;
      ++dataflow_count;
    }
    report.parse_recoveries += p.parse_recoveries;
  }
  if (!report.pairs.empty()) {
    const double k = static_cast<double>(report.pairs.size());
    m.similarity /= k;
    m.bleu /= k;
    m.ngram /= k;
    m.weighted_ngram /= k;
    m.syntax /= k;
    m.codebleu /= k;
  }
  if (dataflow_count) m.dataflow = dataflow_sum / static_cast<double>(dataflow_count);
  return report;
}

MetricReport corpus_evaluate(std::span<const std::string> candidates, std::span<const std::string> references,
                             const MetricWeights& weights, Execution exec) {
  if (candidates.size() != references.size()) {
    throw LengthMismatch("candidate count " + std::to_string(candidates.size()) + " differs from reference count " +
                         std::to_string(references.size()));
  }
  std::vector<EvalPair> pairs;
  pairs.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) pairs.push_back({std::to_string(i), candidates[i], references[i]});
  return corpus_evaluate(pairs, weights, exec);
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

nlohmann::json to_json(const PairScores& p) {
  return {{"id", p.id},
          {"similarity", p.similarity},
          {"bleu", p.bleu},
          {"ngram", p.ngram},
          {"weighted_ngram", p.weighted_ngram},
          {"syntax", p.syntax},
          {"dataflow", optional_json(p.dataflow)},
          {"codebleu", p.codebleu}};
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs) pairs.push_back(to_json(p));
  const auto& m = r.means;
  nlohmann::json means = {{"similarity", m.similarity},
                          {"bleu", m.bleu},
                          {"ngram", m.ngram},
                          {"weighted_ngram", m.weighted_ngram},
                          {"syntax", m.syntax},
                          {"dataflow", optional_json(m.dataflow)},
                          {"codebleu", m.codebleu}};
  return {{"pairs", pairs}, {"means", means}, {"diagnostics", {{"parse_recoveries", r.parse_recoveries}}}};
}

std::string format_table(const MetricReport& r) {
  const auto& m = r.means;
  std::ostringstream out;
  out << std::left << std::setw(24) << "Metric" << "Score\n";
  auto row = [&](const char* name, const std::optional<double>& v) {
    out << std::left << std::setw(24) << name;
    if (v) {
      out << std::fixed << std::setprecision(4) << *v;
    } else {
      out << "-";
    }
    out << '\n';
  };
  row("Similarity Score*", m.similarity);
  row("BLEU", m.bleu);
  row("N-gram match", m.ngram);
  row("Weighted n-gram match", m.weighted_ngram);
  row("Syntax match", m.syntax);
  row("Dataflow match", m.dataflow);
  row("CodeBLEU", m.codebleu);
  out << "pairs: " << r.pairs.size() << ", parse recoveries: " << r.parse_recoveries << '\n';
  out << "* token LCS ratio, not a standard metric\n";
  return out.str();
}

}  // namespace p2c::metrics
