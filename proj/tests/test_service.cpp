#include <filesystem>
#include <thread>
#include <unistd.h>

#include "doctest.h"
#include "httplib.h"
#include "p2c/errors.hpp"
#include "p2c/service.hpp"
#include "p2c/training.hpp"

using namespace p2c;
using namespace p2c::service;
using nlohmann::json;

namespace {

const std::string kPseudo = "read a\nprint a";
const std::string kCode = "int a;\ncin >> a;\ncout << a << endl;";

// A tiny model trained until it reproduces one pair.
const model::Checkpoint& overfit_checkpoint() {
  static const model::Checkpoint ck = [] {
    const std::vector<std::string> src_texts = {kPseudo}, tgt_texts = {kCode};
    model::Checkpoint c;
    c.src_vocab = tok::Vocabulary::build(src_texts);
    c.tgt_vocab = tok::Vocabulary::build(tgt_texts);
    model::ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.d_model = 16;
    cfg.num_heads = 2;
    cfg.d_ff = 32;
    cfg.dropout_rate = 0.0;
    cfg.max_positions = 64;
    cfg.src_vocab = c.src_vocab.size();
    cfg.tgt_vocab = c.tgt_vocab.size();
    const std::vector<dataset::ProgramPair> pairs = {{{"1A", "1", "w"}, kPseudo, kCode}};
    const auto enc = train::encode_pairs(pairs, c.src_vocab, c.tgt_vocab);
    train::TrainConfig tc;
    tc.epochs = 120;
    tc.batch_size = 1;
    tc.warmup_steps = 20;
    c.params = train::train(cfg, tc, {enc, enc}).last;
    c.id = "fixture";
    return c;
  }();
  return ck;
}

ServiceState loaded_state() {
  ServiceState s;
  s.load(overfit_checkpoint());
  return s;
}

}  // namespace

TEST_CASE("health reflects the loaded checkpoint") {
  ServiceState empty;
  auto r = handle_health(empty);
  CHECK(r.status == 200);
  CHECK(r.body["status"] == "ok");
  CHECK(r.body["model_loaded"] == false);

  const auto s = loaded_state();
  r = handle_health(s);
  CHECK(r.body["status"] == "ok");
  CHECK(r.body["model_loaded"] == true);
  CHECK(r.body["checkpoint_id"] == "fixture");
}

TEST_CASE("state loads once and checks vocabulary sizes") {
  ServiceState s;
  s.load(overfit_checkpoint());
  CHECK_THROWS_AS(s.load(overfit_checkpoint()), InputError);
  auto bad = overfit_checkpoint();
  bad.src_vocab = tok::Vocabulary();
  ServiceState t;
  CHECK_THROWS_AS(t.load(bad), InputError);
}

TEST_CASE("generate returns the memorized program") {
  const auto s = loaded_state();
  const auto r = handle_generate(s, json{{"pseudocode", kPseudo}}.dump());
  REQUIRE(r.status == 200);
  CHECK(r.body["code"] == tok::postprocess_code("int a ;\ncin >> a ;\ncout << a << endl ;"));
  CHECK(tok::tokenize(r.body["code"].get<std::string>()) == tok::tokenize(kCode));
  CHECK(r.body["tokens"] == tok::tokenize(kCode).size());
  CHECK(r.body["latency_ms"].get<double>() >= 0.0);

  const auto again = handle_generate(s, json{{"pseudocode", kPseudo}}.dump());
  CHECK(again.body["code"] == r.body["code"]);

  const auto capped = handle_generate(s, json{{"pseudocode", kPseudo}, {"max_len", 3}}.dump());
  CHECK(capped.body["tokens"] == 3);
}

TEST_CASE("generate errors") {
  ServiceState empty;
  CHECK(handle_generate(empty, json{{"pseudocode", "read a"}}.dump()).status == 503);
  const auto s = loaded_state();
  CHECK(handle_generate(s, json{{"pseudocode", ""}}.dump()).status == 422);
  CHECK(handle_generate(s, "{}").status == 422);
  CHECK(handle_generate(s, "not json").status == 422);
  CHECK(handle_generate(s, json{{"pseudocode", "a"}, {"max_len", -1}}.dump()).status == 422);
  std::string long_text;
  for (int i = 0; i < 100; ++i) long_text += "read a ";
  CHECK(handle_generate(s, json{{"pseudocode", long_text}}.dump()).status == 413);
}

TEST_CASE("concurrent generation matches serial results") {
  const auto s = loaded_state();
  const std::vector<std::string> inputs = {kPseudo, "read a", "print a", "print a\nread a"};
  std::vector<json> serial;
  for (const auto& in : inputs) serial.push_back(handle_generate(s, json{{"pseudocode", in}}.dump()).body["code"]);
  std::vector<json> parallel(inputs.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    threads.emplace_back([&, i] { parallel[i] = handle_generate(s, json{{"pseudocode", inputs[i]}}.dump()).body["code"]; });
  }
  for (auto& t : threads) t.join();
  CHECK(parallel == serial);
}

TEST_CASE("evaluate") {
  ServiceState s;
  const std::string program = "int main() { int a; cin >> a; cout << a; }";
  auto r = handle_evaluate(s, json{{"candidate", program}, {"reference", program}}.dump());
  REQUIRE(r.status == 200);
  for (const char* key : {"similarity", "bleu", "ngram", "weighted_ngram", "syntax", "dataflow", "codebleu"}) {
    INFO(key);
    CHECK(r.body[key].get<double>() == doctest::Approx(1.0));
  }
  CHECK(handle_evaluate(s, json{{"candidate", program}}.dump()).status == 422);
  CHECK(handle_evaluate(s, "[]").status == 422);

  r = handle_evaluate(s, json{{"candidate", "int main() { }"}, {"reference", "int main() { cout << 1; }"}}.dump());
  CHECK(r.body["dataflow"].is_null());

  r = handle_evaluate(s, json{{"components", {{"bleu", 0.865}, {"weighted_ngram", 0.849}, {"syntax", 0.8519},
                                             {"dataflow", 0.8981}}}}
                             .dump());
  REQUIRE(r.status == 200);
  CHECK(r.body["codebleu"].get<double>() == doctest::Approx(0.8660).epsilon(1e-3));
  CHECK(handle_evaluate(s, json{{"components", {{"bleu", 0.5}}}}.dump()).status == 422);
}

TEST_CASE("live server answers the three endpoints") {
  const auto s = loaded_state();
  Server server(s, "http://localhost:5173");
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread runner([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["model_loaded"] == true);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");

  auto gen = client.Post("/api/generate", json{{"pseudocode", kPseudo}}.dump(), "application/json");
  REQUIRE(gen);
  CHECK(gen->status == 200);
  CHECK(tok::tokenize(json::parse(gen->body)["code"].get<std::string>()) == tok::tokenize(kCode));

  auto bad = client.Post("/api/generate", json{{"pseudocode", ""}}.dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 422);

  auto ev = client.Post("/api/evaluate", json{{"candidate", kCode}, {"reference", kCode}}.dump(), "application/json");
  REQUIRE(ev);
  CHECK(ev->status == 200);
  CHECK(json::parse(ev->body)["codebleu"].get<double>() == doctest::Approx(1.0));

  auto pre = client.Options("/api/generate");
  REQUIRE(pre);
  CHECK(pre->status == 204);

  server.stop();
  runner.join();
}
