#include "p2c/service.hpp"

#include <utility>

#include "httplib.h"
#include "p2c/errors.hpp"
#include "p2c/tokenizer.hpp"

namespace p2c::service {

ServiceState::ServiceState(metrics::MetricWeights weights)
    : weights_(std::move(weights)), started_(std::chrono::system_clock::now()) {
  weights_.validate();
}

void ServiceState::load(model::Checkpoint checkpoint) {
  if (checkpoint_) throw InputError("a checkpoint is already loaded");
  const auto& cfg = checkpoint.params.config();
  if (checkpoint.src_vocab.size() != cfg.src_vocab || checkpoint.tgt_vocab.size() != cfg.tgt_vocab) {
    throw InputError("vocabulary sizes do not match the model config");
  }
  checkpoint_ = std::move(checkpoint);
}

const model::Checkpoint& ServiceState::checkpoint() const {
  if (!checkpoint_) throw Error("no checkpoint loaded");
  return *checkpoint_;
}

Generation generate(const model::Checkpoint& checkpoint, const std::string& pseudocode, std::size_t max_len) {
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = checkpoint.params.config();
  const auto src = tok::encode(checkpoint.src_vocab, pseudocode, tok::Side::Source);
  if (src.ids.size() > cfg.max_positions) {
    throw SequenceTooLong("pseudocode has " + std::to_string(src.ids.size()) + " positions, limit " +
                          std::to_string(cfg.max_positions));
  }
  const std::size_t budget = max_len == 0 ? cfg.max_positions : max_len;
  const auto out = model::greedy_decode(checkpoint.params, src.ids, budget);
  Generation g;
  g.code = tok::postprocess_code(tok::decode(checkpoint.tgt_vocab, out));
  for (auto id : out) {
    if (id != tok::kStart && id != tok::kEnd) ++g.tokens;
  }
  g.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return g;
}

namespace {

Response error(int status, const std::string& message) { return {status, {{"error", message}}}; }

std::optional<nlohmann::json> parse_object(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace

Response handle_generate(const ServiceState& state, const std::string& request_body) {
  const auto req = parse_object(request_body);
  if (!req) return error(422, "request body must be a JSON object");
  if (!req->contains("pseudocode") || !(*req)["pseudocode"].is_string()) {
    return error(422, "missing string field 'pseudocode'");
  }
  const auto pseudocode = (*req)["pseudocode"].get<std::string>();
  if (tok::tokenize(pseudocode).empty()) return error(422, "pseudocode is empty");
  std::size_t max_len = 0;
  if (req->contains("max_len")) {
    const auto& m = (*req)["max_len"];
    if (!m.is_number_integer() || m.get<long long>() < 1) return error(422, "max_len must be a positive integer");
    max_len = m.get<std::size_t>();
  }
  if (!state.loaded()) return error(503, "no model loaded");
  try {
    const auto g = generate(state.checkpoint(), pseudocode, max_len);
    return {200, {{"code", g.code}, {"tokens", g.tokens}, {"latency_ms", g.latency_ms}}};
  } catch (const SequenceTooLong& e) {
    return error(413, e.what());
  }
}

Response handle_evaluate(const ServiceState& state, const std::string& request_body) {
  const auto req = parse_object(request_body);
  if (!req) return error(422, "request body must be a JSON object");
  if (req->contains("components")) {
    const auto& c = (*req)["components"];
    for (const char* key : {"bleu", "weighted_ngram", "syntax"}) {
      if (!c.contains(key) || !c[key].is_number()) return error(422, std::string("missing component '") + key + "'");
    }
    std::optional<double> dataflow;
    if (c.contains("dataflow") && !c["dataflow"].is_null()) {
      if (!c["dataflow"].is_number()) return error(422, "component 'dataflow' must be a number or null");
      dataflow = c["dataflow"].get<double>();
    }
    const double score = metrics::combine(c["bleu"].get<double>(), c["weighted_ngram"].get<double>(),
                                          c["syntax"].get<double>(), dataflow, state.weights());
    return {200, {{"codebleu", score}}};
  }
  for (const char* key : {"candidate", "reference"}) {
    if (!req->contains(key) || !(*req)[key].is_string()) {
      return error(422, std::string("missing string field '") + key + "'");
    }
  }
  auto scores = metrics::score_pair((*req)["candidate"].get<std::string>(), (*req)["reference"].get<std::string>(),
                                    state.weights());
  auto body = metrics::to_json(scores);
  body.erase("id");
  body["parse_recoveries"] = scores.parse_recoveries;
  return {200, body};
}

Response handle_health(const ServiceState& state) {
  nlohmann::json id = state.loaded() ? nlohmann::json(state.checkpoint().id) : nlohmann::json();
  return {200, {{"status", "ok"}, {"model_loaded", state.loaded()}, {"checkpoint_id", id}}};
}

struct Server::Impl {
  Impl(const ServiceState& s, std::string o) : state(s), origin(std::move(o)) {}
  const ServiceState& state;
  std::string origin;
  httplib::Server http;
};

Server::Server(const ServiceState& state, std::string cors_origin)
    : impl_(std::make_unique<Impl>(state, std::move(cors_origin))) {
  auto& http = impl_->http;
  const auto& st = impl_->state;
  http.set_default_headers({{"Access-Control-Allow-Origin", impl_->origin},
                            {"Access-Control-Allow-Headers", "Content-Type"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  http.Post("/api/generate", [&st, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_generate(st, req.body));
  });
  http.Post("/api/evaluate", [&st, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_evaluate(st, req.body));
  });
  http.Get("/api/health",
           [&st, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_health(st)); });
  http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(nlohmann::json{{"error", what}}.dump(), "application/json");
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_) impl_->http.stop();
}

}  // namespace p2c::service
