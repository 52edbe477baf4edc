#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace p2c::metrics {

using Tokens = std::vector<std::string>;

struct MetricWeights {
  double alpha = 0.25;  // bleu
  double beta = 0.25;   // weighted n-gram match
  double gamma = 0.25;  // syntax match
  double delta = 0.25;  // dataflow match
  std::array<double, 4> ngram = {0.25, 0.25, 0.25, 0.25};
  double keyword_boost = 5.0;

  /// Throws InputError unless the component and n-gram weights each sum to 1
  /// (within 1e-9), are non-negative, and boost >= 1.
  void validate() const;
};

nlohmann::json to_json(const MetricWeights& w);
MetricWeights metric_weights_from_json(const nlohmann::json& j);

/// Clipped matched candidate n-grams over total candidate n-grams.
double ngram_precision(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);

/// min(1, exp(1 - r/c)) * (prod_{n=1..4} p_n)^(1/4); 0 when the candidate is
/// empty or any p_n is 0.
double bleu(std::span<const std::string> candidate, std::span<const std::string> reference);

/// Mean over n = 1..4 of clipped matched / total reference n-grams, taken over
/// the orders for which the reference has at least one n-gram.
double ngram_match(std::span<const std::string> candidate, std::span<const std::string> reference);

/// Like ngram_match, but each reference n-gram weighs `keyword_boost` when it
/// contains a C++ keyword and 1 otherwise; orders are combined with w_n,
/// renormalized over the orders present in the reference.
double weighted_ngram_match(std::span<const std::string> candidate, std::span<const std::string> reference,
                            const MetricWeights& weights = {});

/// Fraction of the reference's AST subtree multiset (min 2 nodes) found in the
/// candidate's. 1 when the reference has no such subtrees.
double syntax_match(std::string_view candidate_code, std::string_view reference_code);

/// Fraction of normalized reference def-use edges found in the candidate.
/// Absent when the reference has no edges.
std::optional<double> dataflow_match(std::string_view candidate_code, std::string_view reference_code);

/// 2 * LCS / (|c| + |r|); 1 when both are empty.
double similarity_score(std::span<const std::string> candidate, std::span<const std::string> reference);

/// alpha*bleu + beta*weighted + gamma*syntax + delta*dataflow. When dataflow
/// is absent the other three weights are rescaled to sum to 1.
double combine(double bleu, double weighted_ngram, double syntax, std::optional<double> dataflow,
               const MetricWeights& weights = {});

struct PairScores {
  std::string id;
  double similarity = 0.0;
  double bleu = 0.0;
  double ngram = 0.0;
  double weighted_ngram = 0.0;
  double syntax = 0.0;
  std::optional<double> dataflow;
  double codebleu = 0.0;
  std::size_t parse_recoveries = 0;  // ErrorNodes in the candidate and reference trees
};

/// Every component for one candidate/reference pair of programs.
PairScores score_pair(std::string_view candidate_code, std::string_view reference_code,
                      const MetricWeights& weights = {});

/// codebleu alone (with its breakdown available through score_pair).
double codebleu(std::string_view candidate_code, std::string_view reference_code, const MetricWeights& weights = {});

struct MetricMeans {
  double similarity = 0.0;
  double bleu = 0.0;
  double ngram = 0.0;
  double weighted_ngram = 0.0;
  double syntax = 0.0;
  std::optional<double> dataflow;  // over pairs where it is defined
  double codebleu = 0.0;
};

struct MetricReport {
  std::vector<PairScores> pairs;
  MetricMeans means;
  std::size_t parse_recoveries = 0;
};

struct EvalPair {
  std::string id;
  std::string candidate;
  std::string reference;
};

enum class Execution { Serial, Parallel };

/// Scores each pair and averages. Results do not depend on `exec`.
MetricReport corpus_evaluate(std::span<const EvalPair> pairs, const MetricWeights& weights = {},
                             Execution exec = Execution::Parallel);

/// Convenience overload; ids are the pair positions. Throws LengthMismatch.
MetricReport corpus_evaluate(std::span<const std::string> candidates, std::span<const std::string> references,
                             const MetricWeights& weights = {}, Execution exec = Execution::Parallel);

nlohmann::json to_json(const PairScores& p);
nlohmann::json to_json(const MetricReport& r);

/// Plain-text table: one row per metric with the corpus mean.
std::string format_table(const MetricReport& r);

}  // namespace p2c::metrics
