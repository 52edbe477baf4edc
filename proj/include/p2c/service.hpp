#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "p2c/checkpoint.hpp"
#include "p2c/metrics.hpp"

namespace p2c::service {

/// Read-only state shared by all request handlers. A checkpoint is loaded at
/// most once, before serving starts.
class ServiceState {
 public:
  explicit ServiceState(metrics::MetricWeights weights = {});

  /// Throws InputError if a checkpoint is already loaded or the vocabularies
  /// disagree with the model config.
  void load(model::Checkpoint checkpoint);

  bool loaded() const { return checkpoint_.has_value(); }
  const model::Checkpoint& checkpoint() const;
  const metrics::MetricWeights& weights() const { return weights_; }
  std::chrono::system_clock::time_point started() const { return started_; }

 private:
  std::optional<model::Checkpoint> checkpoint_;
  metrics::MetricWeights weights_;
  std::chrono::system_clock::time_point started_;
};

struct Generation {
  std::string code;
  std::size_t tokens = 0;  // generated target tokens, excluding START/END
  double latency_ms = 0.0;
};

/// encode -> greedy_decode -> decode -> postprocess_code. max_len of 0 means
/// the model's position budget. Throws SequenceTooLong when the encoded
/// pseudocode exceeds max_positions.
Generation generate(const model::Checkpoint& checkpoint, const std::string& pseudocode, std::size_t max_len = 0);

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// POST /api/generate {pseudocode, max_len?} -> {code, tokens, latency_ms}.
/// 422 empty or malformed input, 503 no model, 413 input too long.
Response handle_generate(const ServiceState& state, const std::string& request_body);

/// POST /api/evaluate {candidate, reference} -> per-pair metric breakdown.
/// Also accepts {components: {bleu, weighted_ngram, syntax, dataflow?}} and
/// returns their codebleu combination. 422 on a missing field.
Response handle_evaluate(const ServiceState& state, const std::string& request_body);

/// GET /api/health -> {status, model_loaded, checkpoint_id}.
Response handle_health(const ServiceState& state);

/// HTTP server exposing the three handlers with CORS headers.
class Server {
 public:
  explicit Server(const ServiceState& state, std::string cors_origin = "*");
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds host:port (port 0 picks a free port) and returns the bound port.
  /// Throws Error if binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocks the calling thread.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace p2c::service
