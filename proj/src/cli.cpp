#include "p2c/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "p2c/checkpoint.hpp"
#include "p2c/cppast.hpp"
#include "p2c/dataset.hpp"
#include "p2c/errors.hpp"
#include "p2c/metrics.hpp"
#include "p2c/random.hpp"
#include "p2c/service.hpp"
#include "p2c/training.hpp"

namespace p2c::cli {

namespace fs = std::filesystem;

namespace {

struct SelfCheckFailed : Error {
  using Error::Error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  auto j = nlohmann::json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw InputError("invalid JSON in " + path.string());
  return j;
}

std::vector<dataset::ProgramPair> read_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  return dataset::read_jsonl(in);
}

void write_pairs(const fs::path& path, std::span<const dataset::ProgramPair> pairs) {
  std::ostringstream ss;
  dataset::write_jsonl(ss, pairs);
  write_text(path, ss.str());
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw InputError("bad split component '" + part + "'");
    }
  }
  if (out.size() != 3) throw InputError("--split needs three comma-separated ratios");
  return out;
}

// -- config file support ----------------------------------------------------

std::string scalar_to_arg(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string s;
    for (const auto& x : v) {
      if (!s.empty()) s += ',';
      s += scalar_to_arg(x);
    }
    return s;
  }
  return v.dump();
}

/// Turns config-file keys into leading flags for `sub`; explicit flags come
/// later on the command line and win (options take the last value).
std::vector<std::string> config_args(const nlohmann::json& cfg, const CLI::App& sub) {
  std::vector<std::string> out;
  auto apply = [&](const nlohmann::json& obj) {
    for (const auto& [key, value] : obj.items()) {
      if (key == "config" || value.is_object()) continue;
      const CLI::Option* opt = sub.get_option_no_throw("--" + key);
      if (!opt) continue;
      if (opt->get_type_size_max() == 0) {
        if (value.is_boolean() ? value.get<bool>() : scalar_to_arg(value) == "true") out.push_back("--" + key);
      } else {
        out.push_back("--" + key);
        out.push_back(scalar_to_arg(value));
      }
    }
  };
  apply(cfg);
  if (cfg.contains(sub.get_name()) && cfg[sub.get_name()].is_object()) apply(cfg[sub.get_name()]);
  return out;
}

/// Effective option values of a parsed subcommand, shaped so the file can be
/// passed back through --config.
/// {"<command>": {flag: value}} for every option given on the command line or
/// through a config file. Unset options are left out: some defaults depend on
/// other flags (--small), so echoing them would change a rerun.
nlohmann::json effective_config(const CLI::App& sub, const nlohmann::json& resolved = nullptr) {
  nlohmann::json opts = nlohmann::json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config" || opt->count() == 0) continue;
    const std::string key = names.front();
    if (opt->get_type_size_max() == 0) {
      opts[key] = true;
    } else {
      const auto results = opt->results();
      opts[key] = results.empty() ? std::string() : results.back();
    }
  }
  nlohmann::json out = {{sub.get_name(), opts}};
  if (!resolved.is_null()) out["resolved"] = resolved;
  return out;
}

// -- shared pieces ------------------------------------------------------------

struct ModelFlags {
  bool small = false;
  std::size_t layers = 4;
  std::size_t d_model = 128;
  std::size_t heads = 8;
  std::size_t d_ff = 0;
  double dropout = 0.1;
  std::size_t max_positions = 2048;
  std::uint64_t model_seed = 0;
  CLI::Option* layers_opt = nullptr;
  CLI::Option* d_model_opt = nullptr;
  CLI::Option* heads_opt = nullptr;
  CLI::Option* d_ff_opt = nullptr;
  CLI::Option* dropout_opt = nullptr;

  void add(CLI::App* app) {
    app->add_flag("--small", small, "start from the one-layer, width-128 desk-scale configuration");
    layers_opt = app->add_option("--layers", layers, "encoder and decoder layers");
    d_model_opt = app->add_option("--d-model", d_model, "model width");
    heads_opt = app->add_option("--heads", heads, "attention heads");
    d_ff_opt = app->add_option("--d-ff", d_ff, "feed-forward width (0 = 4 x d-model)");
    dropout_opt = app->add_option("--dropout", dropout, "dropout rate");
    app->add_option("--max-positions", max_positions, "longest allowed sequence");
    app->add_option("--model-seed", model_seed, "parameter initialization seed");
  }

  model::ModelConfig build(std::size_t src_vocab, std::size_t tgt_vocab) const {
    model::ModelConfig c = small ? model::ModelConfig::small(src_vocab, tgt_vocab) : model::ModelConfig{};
    if (!small || layers_opt->count()) c.num_layers = layers;
    if (!small || d_model_opt->count()) c.d_model = d_model;
    if (!small || heads_opt->count()) c.num_heads = heads;
    if (!small || dropout_opt->count()) c.dropout_rate = dropout;
    if (d_ff_opt->count() && d_ff > 0) {
      c.d_ff = d_ff;
    } else if (!small || d_model_opt->count()) {
      c.d_ff = 4 * c.d_model;
    }
    c.max_positions = max_positions;
    c.src_vocab = src_vocab;
    c.tgt_vocab = tgt_vocab;
    c.seed = model_seed;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t warmup = 1000;
  double lr_factor = 1.0;
  double clip_norm = 0.0;
  std::uint64_t seed = 0;
  bool serial = false;

  CLI::Option* warmup_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* clip_opt = nullptr;

  void add(CLI::App* app, std::size_t default_epochs) {
    epochs = default_epochs;
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch-size", batch_size, "samples per optimizer step");
    warmup_opt = app->add_option("--warmup", warmup, "learning-rate warmup steps");
    lr_opt = app->add_option("--lr-factor", lr_factor, "multiplier on the learning-rate schedule");
    clip_opt = app->add_option("--clip-norm", clip_norm, "clip gradients to this global L2 norm (0 = off)");
    app->add_option("--seed", seed, "shuffling and dropout seed");
    app->add_flag("--serial", serial, "disable OpenMP batch parallelism");
  }

  /// With `small`, schedule flags that were not given come from TrainConfig::small.
  train::TrainConfig build(bool small) const {
    train::TrainConfig t = small ? train::TrainConfig::small() : train::TrainConfig{};
    t.epochs = epochs;
    t.batch_size = batch_size;
    if (!small || warmup_opt->count()) t.warmup_steps = warmup;
    if (!small || lr_opt->count()) t.lr_factor = lr_factor;
    if (!small || clip_opt->count()) t.clip_norm = clip_norm;
    t.seed = seed;
    t.exec = serial ? model::Execution::Serial : model::Execution::Parallel;
    t.validate();
    return t;
  }
};

struct DataFlags {
  std::string data;
  std::size_t limit = 0;
  std::size_t min_count = 1;

  void add(CLI::App* app) {
    app->add_option("--data", data, "directory with train/validation jsonl from preprocess")->required();
    app->add_option("--limit", limit, "use only the first N training pairs (0 = all)");
    app->add_option("--min-count", min_count, "vocabulary frequency threshold when building vocabularies");
  }
};

struct PreparedData {
  tok::Vocabulary src_vocab;
  tok::Vocabulary tgt_vocab;
  train::EncodedCorpus corpus;
  std::size_t longest = 0;
};

std::vector<std::string> pseudocode_texts(std::span<const dataset::ProgramPair> pairs) {
  std::vector<std::string> t;
  for (const auto& p : pairs) t.push_back(p.pseudocode);
  return t;
}

std::vector<std::string> code_texts(std::span<const dataset::ProgramPair> pairs) {
  std::vector<std::string> t;
  for (const auto& p : pairs) t.push_back(p.code);
  return t;
}

PreparedData prepare(const DataFlags& flags, std::ostream& err) {
  const fs::path dir = flags.data;
  auto train_pairs = read_pairs(dir / "train.jsonl");
  std::vector<dataset::ProgramPair> validation;
  if (fs::exists(dir / "valid.jsonl")) validation = read_pairs(dir / "valid.jsonl");
  if (flags.limit > 0 && train_pairs.size() > flags.limit) train_pairs.resize(flags.limit);
  if (train_pairs.empty()) throw InputError("no training pairs in " + (dir / "train.jsonl").string());
  if (validation.empty()) {
    err << "warning: empty validation split; validating on the training pairs\n";
    validation = train_pairs;
  }
  PreparedData d;
  if (fs::exists(dir / "src_vocab.json") && fs::exists(dir / "tgt_vocab.json")) {
    d.src_vocab = tok::Vocabulary::from_json(read_json(dir / "src_vocab.json"));
    d.tgt_vocab = tok::Vocabulary::from_json(read_json(dir / "tgt_vocab.json"));
  } else {
    const auto src = pseudocode_texts(train_pairs);
    const auto tgt = code_texts(train_pairs);
    d.src_vocab = tok::Vocabulary::build(src, flags.min_count);
    d.tgt_vocab = tok::Vocabulary::build(tgt, flags.min_count);
  }
  d.corpus.train = train::encode_pairs(train_pairs, d.src_vocab, d.tgt_vocab);
  d.corpus.validation = train::encode_pairs(validation, d.src_vocab, d.tgt_vocab);
  for (const auto* set : {&d.corpus.train, &d.corpus.validation}) {
    for (const auto& p : *set) d.longest = std::max({d.longest, p.src.size(), p.tgt.size()});
  }
  return d;
}

/// Central-difference check of the tiny configuration.
train::GradientCheckReport self_check(std::uint64_t seed) {
  model::ModelConfig c;
  c.num_layers = 1;
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  c.dropout_rate = 0.0;
  c.max_positions = 16;
  c.src_vocab = 20;
  c.tgt_vocab = 20;
  c.seed = seed;
  const auto params = model::init_params(c);
  Rng rng(seed);
  std::vector<train::EncodedPair> pairs;
  for (std::size_t len : {5, 3}) {
    train::EncodedPair p;
    p.src.push_back(tok::kStart);
    p.tgt.push_back(tok::kStart);
    for (std::size_t i = 0; i < len; ++i) {
      p.src.push_back(static_cast<std::int32_t>(rng.uniform_int(tok::kNumSpecials, 19)));
      p.tgt.push_back(static_cast<std::int32_t>(rng.uniform_int(tok::kNumSpecials, 19)));
    }
    p.src.push_back(tok::kEnd);
    p.tgt.push_back(tok::kEnd);
    pairs.push_back(std::move(p));
  }
  return train::gradient_check(params, train::make_batch(pairs), 1e-4);
}

void print_history_line(std::ostream& out, const train::EpochRecord& r) {
  out << "epoch " << r.epoch << " train_loss " << std::setprecision(6) << r.train_loss << " validation_loss "
      << r.validation_loss << " lr " << r.learning_rate << " seconds " << std::setprecision(3) << r.seconds << "\n";
  out.flush();
}

nlohmann::json history_without_timing(const train::TrainHistory& h, nlohmann::json& timing) {
  auto j = train::to_json(h);
  timing = nlohmann::json::array();
  for (auto& e : j["epochs"]) {
    timing.push_back({{"epoch", e["epoch"]}, {"seconds", e["seconds"]}});
    e.erase("seconds");
  }
  return j;
}

std::vector<std::string> read_code_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_string()) {
      out.push_back(j.get<std::string>());
    } else if (j.is_object() && j.contains("code") && j["code"].is_string()) {
      out.push_back(j["code"].get<std::string>());
    } else if (j.is_object() && j.contains("candidate") && j["candidate"].is_string()) {
      out.push_back(j["candidate"].get<std::string>());
    } else {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected a JSON string or an object with \"code\"");
    }
  }
  return out;
}

std::vector<metrics::EvalPair> read_eval_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<metrics::EvalPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("candidate") || !j.contains("reference") || !j["candidate"].is_string() ||
        !j["reference"].is_string()) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected {\"candidate\", \"reference\"}");
    }
    metrics::EvalPair p;
    p.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : std::to_string(out.size());
    p.candidate = j["candidate"].get<std::string>();
    p.reference = j["reference"].get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pseudocode-to-C++ transformer toolkit", "p2c"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  std::string config_path;
  app.add_option("--config", config_path, "JSON file whose keys mirror the long flag names");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "aggregate a SPoC TSV into split jsonl files");
  std::string pre_input, pre_out, pre_split = "0.8,0.1,0.1";
  std::uint64_t pre_seed = 0;
  std::size_t pre_max_positions = 2048, pre_indent = 4;
  pre->add_option("--input", pre_input, "SPoC TSV file")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--split", pre_split, "train,validation,test ratios");
  pre->add_option("--seed", pre_seed, "problem shuffle seed");
  pre->add_option("--max-positions", pre_max_positions, "drop pairs longer than this many positions");
  pre->add_option("--indent-width", pre_indent, "spaces per indentation level");

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "build source and target vocabularies from train.jsonl");
  std::string bv_data, bv_out;
  std::size_t bv_min_count = 1;
  bv->add_option("--data", bv_data, "directory with train.jsonl")->required();
  bv->add_option("--out", bv_out, "output directory (default: --data)");
  bv->add_option("--min-count", bv_min_count, "frequency threshold");

  // train
  auto* tr = app.add_subcommand("train", "train a model and write checkpoints");
  DataFlags tr_data;
  ModelFlags tr_model;
  TrainFlags tr_train;
  std::string tr_out;
  bool tr_self_check = false;
  double tr_tolerance = 1e-4;
  tr_data.add(tr);
  tr_model.add(tr);
  tr_train.add(tr, 30);
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_flag("--self-check", tr_self_check, "run the finite-difference gradient check before training");
  tr->add_option("--self-check-tolerance", tr_tolerance, "largest accepted relative gradient error");

  // search
  auto* se = app.add_subcommand("search", "random hyperparameter search ranked by validation loss");
  DataFlags se_data;
  ModelFlags se_model;
  TrainFlags se_train;
  std::string se_out;
  std::size_t se_iterations = 5, se_min_layers = 4, se_max_layers = 6;
  std::vector<std::size_t> se_widths = {128, 256};
  double se_min_dropout = 0.1, se_max_dropout = 0.2;
  se_data.add(se);
  se_model.add(se);
  se_train.add(se, 2);
  se->add_option("--out", se_out, "output directory")->required();
  se->add_option("--iterations", se_iterations, "number of sampled configurations");
  se->add_option("--min-layers", se_min_layers, "smallest layer count");
  se->add_option("--max-layers", se_max_layers, "largest layer count");
  se->add_option("--d-models", se_widths, "candidate widths")->delimiter(',');
  se->add_option("--min-dropout", se_min_dropout, "lowest dropout rate");
  se->add_option("--max-dropout", se_max_dropout, "highest dropout rate");

  // generate
  auto* ge = app.add_subcommand("generate", "translate pseudocode with a checkpoint");
  std::string ge_checkpoint, ge_pseudocode, ge_input, ge_data, ge_output;
  std::size_t ge_max_len = 0;
  ge->add_option("--checkpoint", ge_checkpoint, "checkpoint file")->required();
  auto* ge_text_opt = ge->add_option("--pseudocode", ge_pseudocode, "pseudocode text");
  auto* ge_input_opt = ge->add_option("--input", ge_input, "file holding pseudocode");
  auto* ge_data_opt = ge->add_option("--data", ge_data, "jsonl of program pairs; writes candidate/reference jsonl");
  ge_text_opt->excludes(ge_input_opt)->excludes(ge_data_opt);
  ge_input_opt->excludes(ge_data_opt);
  ge->add_option("--output", ge_output, "output file (default: stdout)");
  ge->add_option("--max-len", ge_max_len, "generated token budget (0 = model limit)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score candidates against references");
  std::string ev_pairs, ev_candidates, ev_references, ev_out, ev_weights;
  bool ev_table = false, ev_serial = false;
  auto* ev_pairs_opt = ev->add_option("--pairs", ev_pairs, "jsonl with candidate and reference fields");
  auto* ev_cand_opt = ev->add_option("--candidates", ev_candidates, "jsonl of candidate programs");
  auto* ev_ref_opt = ev->add_option("--references", ev_references, "jsonl of reference programs");
  ev_pairs_opt->excludes(ev_cand_opt)->excludes(ev_ref_opt);
  ev_cand_opt->needs(ev_ref_opt);
  ev_ref_opt->needs(ev_cand_opt);
  ev->add_option("--out", ev_out, "report file (default: stdout)");
  ev->add_option("--weights", ev_weights, "JSON metric weights");
  ev->add_flag("--table", ev_table, "print a plain metric table");
  ev->add_flag("--serial", ev_serial, "score pairs without OpenMP");

  // serve
  auto* sv = app.add_subcommand("serve", "serve the HTTP API");
  std::string sv_checkpoint, sv_host = "127.0.0.1", sv_origin = "*", sv_weights;
  int sv_port = 8080;
  sv->add_option("--checkpoint", sv_checkpoint, "checkpoint to load before serving");
  sv->add_option("--host", sv_host, "bind address");
  sv->add_option("--port", sv_port, "port (0 = any free port)");
  sv->add_option("--cors-origin", sv_origin, "Access-Control-Allow-Origin value");
  sv->add_option("--weights", sv_weights, "JSON metric weights");

  // stats
  auto* st = app.add_subcommand("stats", "corpus statistics and programs-per-problem histogram");
  std::string st_input, st_data, st_out;
  bool st_svg = false;
  auto* st_input_opt = st->add_option("--input", st_input, "SPoC TSV file");
  auto* st_data_opt = st->add_option("--data", st_data, "directory with split jsonl files");
  st_input_opt->excludes(st_data_opt);
  st->add_option("--out", st_out, "output directory (default: stdout only)");
  st->add_flag("--svg", st_svg, "also write histogram.svg");

  // ast
  auto* as = app.add_subcommand("ast", "dump the parse tree and dataflow graph of a C++ file as JSON");
  std::string as_input;
  as->add_option("--input", as_input, "C++ source file")->required();

  // config-file values are injected ahead of the command line, so the last one wins
  for (auto* sub : app.get_subcommands({})) {
    for (auto* opt : sub->get_options()) {
      if (opt->get_type_size_max() != 0) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  try {
    // locate --config before the real parse so its keys can be injected
    std::vector<std::string> final_args = args;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] == "--config") config_path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (args.size() == 1 && args[0].rfind("--config=", 0) == 0) config_path = args[0].substr(9);
    if (!config_path.empty()) {
      const auto cfg = read_json(config_path);
      if (!cfg.is_object()) throw InputError("config file must hold a JSON object");
      auto cmd = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
        return app.get_subcommand_no_throw(a) != nullptr;
      });
      if (cmd != args.end()) {
        const auto injected = config_args(cfg, *app.get_subcommand(*cmd));
        final_args.assign(args.begin(), cmd + 1);
        final_args.insert(final_args.end(), injected.begin(), injected.end());
        final_args.insert(final_args.end(), cmd + 1, args.end());
      }
    }
    std::vector<std::string> reversed(final_args.rbegin(), final_args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (*pre) {
      const auto ratios = parse_ratios(pre_split);
      std::ifstream in(pre_input);
      if (!in) throw InputError("cannot read " + pre_input);
      auto parsed = dataset::parse_spoc_tsv(in);
      dataset::AggregateOptions opts;
      opts.indent_width = pre_indent;
      auto pairs = dataset::aggregate_programs(parsed.records, parsed.diagnostics, opts);
      const std::size_t aggregated = pairs.size();
      pairs = dataset::filter_by_length(pairs, pre_max_positions, parsed.diagnostics);
      const auto corpus = dataset::split_corpus(pairs, {ratios[0], ratios[1], ratios[2]}, pre_seed);
      const fs::path dir = pre_out;
      write_pairs(dir / "train.jsonl", corpus.train);
      write_pairs(dir / "valid.jsonl", corpus.validation);
      write_pairs(dir / "test.jsonl", corpus.test);
      const auto& d = parsed.diagnostics;
      nlohmann::json stats = {
          {"corpus", dataset::to_json(dataset::corpus_stats(pairs))},
          {"aggregated_programs", aggregated},
          {"splits", {{"train", corpus.train.size()}, {"validation", corpus.validation.size()}, {"test", corpus.test.size()}}},
          {"diagnostics",
           {{"malformed_rows", d.malformed_rows},
            {"dropped_groups", d.dropped_groups},
            {"dropped_too_long", d.dropped_too_long},
            {"messages", d.messages}}}};
      write_json(dir / "stats.json", stats);
      write_json(dir / "run-config.json", effective_config(*pre));
      for (const auto& m : d.messages) err << "warning: " << m << "\n";
      out << "programs " << pairs.size() << " train " << corpus.train.size() << " validation "
          << corpus.validation.size() << " test " << corpus.test.size() << "\n";
      return kOk;
    }

    if (*bv) {
      const fs::path dir = bv_data;
      const fs::path dest = bv_out.empty() ? dir : fs::path(bv_out);
      const auto pairs = read_pairs(dir / "train.jsonl");
      const auto src = tok::Vocabulary::build(pseudocode_texts(pairs), bv_min_count);
      const auto tgt = tok::Vocabulary::build(code_texts(pairs), bv_min_count);
      write_json(dest / "src_vocab.json", src.to_json());
      write_json(dest / "tgt_vocab.json", tgt.to_json());
      write_json(dest / "run-config.json", effective_config(*bv));
      out << "source vocabulary " << src.size() << " target vocabulary " << tgt.size() << "\n";
      return kOk;
    }

    if (*tr) {
      const fs::path dir = tr_out;
      if (tr_self_check) {
        const auto report = self_check(tr_model.model_seed);
        out << "self-check max relative error " << std::setprecision(3) << report.max_relative_error << " ("
            << report.worst_array << ")\n";
        if (!(report.max_relative_error < tr_tolerance)) {
          throw SelfCheckFailed("gradient check failed: relative error " + std::to_string(report.max_relative_error) +
                                " in " + report.worst_array);
        }
      }
      const auto data = prepare(tr_data, err);
      const auto mc = tr_model.build(data.src_vocab.size(), data.tgt_vocab.size());
      if (data.longest > mc.max_positions) {
        throw InputError("longest sequence has " + std::to_string(data.longest) + " positions, above --max-positions");
      }
      const auto tc = tr_train.build(tr_model.small);
      const nlohmann::json resolved = {{"model", model::to_json(mc)}, {"train", train::to_json(tc)}};
      write_json(dir / "run-config.json", effective_config(*tr, resolved));
      write_json(dir / "src_vocab.json", data.src_vocab.to_json());
      write_json(dir / "tgt_vocab.json", data.tgt_vocab.to_json());
      const auto result = train::train(mc, tc, data.corpus, [&](const train::EpochRecord& r) { print_history_line(out, r); });
      model::save_checkpoint(dir / "checkpoint.bin", result.best, data.src_vocab, data.tgt_vocab);
      model::save_checkpoint(dir / "last.bin", result.last, data.src_vocab, data.tgt_vocab);
      nlohmann::json timing;
      write_json(dir / "history.json", history_without_timing(result.history, timing));
      write_json(dir / "timing.json", timing);
      out << "best epoch " << result.history.best_epoch << " validation_loss " << std::setprecision(6)
          << result.history.best_validation_loss << "\n";
      return kOk;
    }

    if (*se) {
      const fs::path dir = se_out;
      const auto data = prepare(se_data, err);
      const auto base = se_model.build(data.src_vocab.size(), data.tgt_vocab.size());
      train::SearchSpace space;
      space.iterations = se_iterations;
      space.min_layers = se_min_layers;
      space.max_layers = se_max_layers;
      space.d_model_choices = se_widths;
      space.min_dropout = se_min_dropout;
      space.max_dropout = se_max_dropout;
      write_json(dir / "run-config.json", effective_config(*se));
      const auto ranked = train::random_search(space, base, se_train.build(se_model.small), data.corpus, se_train.seed,
                                               [&](const train::Trial& t) {
                                                 out << "trial " << t.sample_index << " layers " << t.config.num_layers
                                                     << " d_model " << t.config.d_model << " dropout "
                                                     << std::setprecision(4) << t.config.dropout_rate
                                                     << " validation_loss " << std::setprecision(6)
                                                     << t.validation_loss << "\n";
                                               });
      write_json(dir / "search.json", train::to_json(ranked));
      return kOk;
    }

    if (*ge) {
      auto ckpt = model::load_checkpoint(ge_checkpoint);
      std::ostringstream result;
      if (!ge_data.empty()) {
        const auto pairs = read_pairs(ge_data);
        for (const auto& p : pairs) {
          const auto g = service::generate(ckpt, p.pseudocode, ge_max_len);
          result << nlohmann::json{{"id", p.id.str()}, {"candidate", g.code}, {"reference", p.code}}.dump() << "\n";
        }
      } else {
        std::string text = ge_pseudocode;
        if (!ge_input.empty()) text = read_text(ge_input);
        if (ge_text_opt->count() == 0 && ge_input.empty()) throw InputError("one of --pseudocode, --input, --data is required");
        if (tok::tokenize(text).empty()) throw InputError("pseudocode is empty");
        result << service::generate(ckpt, text, ge_max_len).code << "\n";
      }
      if (ge_output.empty()) {
        out << result.str();
      } else {
        write_text(ge_output, result.str());
      }
      return kOk;
    }

    if (*ev) {
      const auto weights = ev_weights.empty() ? metrics::MetricWeights{} : metrics::metric_weights_from_json(read_json(ev_weights));
      std::vector<metrics::EvalPair> pairs;
      if (!ev_pairs.empty()) {
        pairs = read_eval_pairs(ev_pairs);
      } else if (!ev_candidates.empty()) {
        const auto cands = read_code_list(ev_candidates);
        const auto refs = read_code_list(ev_references);
        if (cands.size() != refs.size()) {
          throw LengthMismatch("candidate count " + std::to_string(cands.size()) + " differs from reference count " +
                               std::to_string(refs.size()));
        }
        for (std::size_t i = 0; i < cands.size(); ++i) pairs.push_back({std::to_string(i), cands[i], refs[i]});
      } else {
        throw InputError("either --pairs or --candidates with --references is required");
      }
      const auto report = metrics::corpus_evaluate(
          pairs, weights, ev_serial ? metrics::Execution::Serial : metrics::Execution::Parallel);
      const auto json = metrics::to_json(report).dump(2) + "\n";
      if (ev_out.empty()) {
        out << json;
      } else {
        write_text(ev_out, json);
      }
      if (ev_table) out << metrics::format_table(report);
      return kOk;
    }

    if (*sv) {
      const auto weights = sv_weights.empty() ? metrics::MetricWeights{} : metrics::metric_weights_from_json(read_json(sv_weights));
      service::ServiceState state(weights);
      if (!sv_checkpoint.empty()) state.load(model::load_checkpoint(sv_checkpoint));
      service::Server server(state, sv_origin);
      const int port = server.bind(sv_host, sv_port);
      out << "listening on http://" << sv_host << ":" << port << " model_loaded " << std::boolalpha << state.loaded()
          << "\n";
      out.flush();
      server.listen();
      return kOk;
    }

    if (*st) {
      std::vector<dataset::ProgramPair> pairs;
      if (!st_input.empty()) {
        std::ifstream in(st_input);
        if (!in) throw InputError("cannot read " + st_input);
        auto parsed = dataset::parse_spoc_tsv(in);
        pairs = dataset::aggregate_programs(parsed.records, parsed.diagnostics);
      } else if (!st_data.empty()) {
        for (const char* name : {"train.jsonl", "valid.jsonl", "test.jsonl"}) {
          const fs::path p = fs::path(st_data) / name;
          if (!fs::exists(p)) continue;
          auto part = read_pairs(p);
          pairs.insert(pairs.end(), part.begin(), part.end());
        }
      } else {
        throw InputError("one of --input or --data is required");
      }
      const auto stats = dataset::corpus_stats(pairs);
      const auto json = dataset::to_json(stats);
      if (st_out.empty()) {
        out << json.dump(2) << "\n";
      } else {
        const fs::path dir = st_out;
        write_json(dir / "stats.json", json);
        nlohmann::json hist = nlohmann::json::object();
        for (const auto& [k, v] : stats.histogram) hist[std::to_string(k)] = v;
        write_json(dir / "histogram.json", {{"programs_per_problem", hist}});
        if (st_svg) write_text(dir / "histogram.svg", dataset::histogram_svg(stats));
        write_json(dir / "run-config.json", effective_config(*st));
        out << "problems " << stats.problems << " programs " << stats.programs << "\n";
      }
      return kOk;
    }

    if (*as) {
      const auto code = read_text(as_input);
      const auto parsed = cpp::parse_cpp(code);
      nlohmann::json diags = nlohmann::json::array();
      for (const auto& d : parsed.diagnostics) {
        diags.push_back({{"line", d.line}, {"column", d.column}, {"message", d.message}});
      }
      out << nlohmann::json{{"ast", cpp::to_json(parsed.root)},
                            {"dataflow", cpp::to_json(cpp::extract_dataflow(parsed.root))},
                            {"diagnostics", diags}}
                 .dump(2)
          << "\n";
      return kOk;
    }
  } catch (const SelfCheckFailed& e) {
    err << "error: " << e.what() << "\n";
    return kSelfCheckFailed;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace p2c::cli
