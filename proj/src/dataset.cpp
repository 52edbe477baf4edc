#include "p2c/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "p2c/errors.hpp"
#include "p2c/random.hpp"
#include "p2c/tokenizer.hpp"

namespace p2c::dataset {

namespace {

constexpr std::array<const char*, 7> kColumns = {"text", "code", "workerid", "probid", "subid", "line", "indent"};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cells.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cells;
}

bool parse_index(const std::string& s, std::size_t& out) {
  if (s.empty()) return false;
  std::size_t value = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  out = value;
  return true;
}

std::string render_lines(const std::vector<std::pair<std::size_t, std::string>>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i > 0) out += '\n';
    out.append(lines[i].first, ' ');
    out += lines[i].second;
  }
  return out;
}

LengthPercentiles percentiles(std::vector<std::size_t> v) {
  LengthPercentiles p;
  if (v.empty()) return p;
  std::sort(v.begin(), v.end());
  // nearest-rank
  auto rank = [&](double q) {
    const auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(r, 1, v.size()) - 1];
  };
  p.p50 = rank(0.50);
  p.p90 = rank(0.90);
  p.p99 = rank(0.99);
  p.max = v.back();
  return p;
}

nlohmann::json to_json(const LengthPercentiles& p) {
  return {{"p50", p.p50}, {"p90", p.p90}, {"p99", p.p99}, {"max", p.max}};
}

}  // namespace

std::string ProgramKey::str() const { return probid + ":" + subid + ":" + workerid; }

ProgramKey ProgramKey::parse(const std::string& s) {
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? std::string::npos : s.find(':', a + 1);
  if (b == std::string::npos) throw InputError("malformed program id: " + s);
  return {s.substr(0, a), s.substr(a + 1, b - a - 1), s.substr(b + 1)};
}

ParseResult parse_spoc_tsv(std::istream& in) {
  ParseResult result;
  std::string line;
  if (!std::getline(in, line)) throw MissingColumn("empty input: header row required");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_tabs(line);
  std::array<std::size_t, kColumns.size()> col{};
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), kColumns[c]);
    if (it == header.end()) throw MissingColumn(std::string("missing required column: ") + kColumns[c]);
    col[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    SpocRecord r;
    bool ok = cells.size() == header.size();
    if (ok) {
      r.text = cells[col[0]];
      r.code = cells[col[1]];
      r.workerid = cells[col[2]];
      r.probid = cells[col[3]];
      r.subid = cells[col[4]];
      ok = parse_index(cells[col[5]], r.line) && parse_index(cells[col[6]], r.indent);
    }
    if (!ok) {
      ++result.diagnostics.malformed_rows;
      result.diagnostics.messages.push_back("row " + std::to_string(row) + ": malformed (expected " +
                                            std::to_string(header.size()) + " columns, got " +
                                            std::to_string(cells.size()) + ")");
      continue;
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

std::vector<std::string> default_preamble() { return {"#include <iostream>", "using namespace std;"}; }

std::vector<ProgramPair> aggregate_programs(std::span<const SpocRecord> records, Diagnostics& diag,
                                            const AggregateOptions& opts) {
  std::map<ProgramKey, std::vector<const SpocRecord*>> groups;
  for (const auto& r : records) groups[{r.probid, r.subid, r.workerid}].push_back(&r);

  std::vector<ProgramPair> pairs;
  pairs.reserve(groups.size());
  for (auto& [key, rows] : groups) {
    std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->line < b->line; });
    const auto dup = std::adjacent_find(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->line == b->line; });
    if (dup != rows.end()) {
      ++diag.dropped_groups;
      diag.messages.push_back("group " + key.str() + ": duplicate line index " + std::to_string((*dup)->line) +
                              ", group dropped");
      continue;
    }

    std::vector<std::pair<std::size_t, std::string>> code, pseudo;
    for (const auto& p : opts.preamble) code.emplace_back(0, p);
    for (const auto* r : rows) {
      code.emplace_back(r->indent * opts.indent_width, r->code);
      pseudo.emplace_back(r->text.empty() ? 0 : r->indent * opts.indent_width, r->text);
    }
    pairs.push_back({key, render_lines(pseudo), render_lines(code)});
  }
  return pairs;
}

std::vector<ProgramPair> filter_by_length(std::span<const ProgramPair> pairs, std::size_t max_positions,
                                          Diagnostics& diag) {
  std::vector<ProgramPair> kept;
  kept.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto src = tok::tokenize(p.pseudocode).size() + 2;
    const auto tgt = tok::tokenize(p.code).size() + 2;
    if (src > max_positions || tgt > max_positions) {
      ++diag.dropped_too_long;
      diag.messages.push_back("pair " + p.id.str() + ": encoded length " + std::to_string(std::max(src, tgt)) +
                              " exceeds max positions " + std::to_string(max_positions) + ", excluded");
      continue;
    }
    kept.push_back(p);
  }
  return kept;
}

Corpus split_corpus(std::span<const ProgramPair> pairs, SplitRatios ratios, std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.validation, ratios.test};
  for (double x : r) {
    if (!(x >= 0.0)) throw InputError("split ratios must be non-negative");
  }
  const double total = r[0] + r[1] + r[2];
  if (std::abs(total - 1.0) > 1e-9) throw InputError("split ratios must sum to 1");

  std::set<std::string> probid_set;
  for (const auto& p : pairs) probid_set.insert(p.id.probid);
  if (probid_set.size() < 3) {
    throw InsufficientProblems("need at least 3 distinct problems to split, got " + std::to_string(probid_set.size()));
  }
  std::vector<std::string> probids(probid_set.begin(), probid_set.end());
  Rng rng(seed);
  rng.shuffle(probids);

  // Largest-remainder apportionment of problems, then make sure every split
  // with a positive ratio receives at least one problem.
  const auto n = probids.size();
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = r[i] * static_cast<double>(n);
    count[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(count[i]);
    assigned += count[i];
  }
  while (assigned < n) {
    const auto i = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++count[i];
    rem[i] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i) {
    if (r[i] > 0.0 && count[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
      --count[donor];
      ++count[i];
    }
  }

  std::map<std::string, int> which;
  std::size_t k = 0;
  for (int i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < count[i]; ++c) which[probids[k++]] = i;
  }

  Corpus corpus;
  corpus.split_seed = seed;
  for (const auto& p : pairs) {
    switch (which.at(p.id.probid)) {
      case 0: corpus.train.push_back(p); break;
      case 1: corpus.validation.push_back(p); break;
      default: corpus.test.push_back(p); break;
    }
  }
  return corpus;
}

CorpusStats corpus_stats(std::span<const ProgramPair> pairs) {
  CorpusStats s;
  std::map<std::string, std::size_t> per_problem;
  std::vector<std::size_t> src_len, tgt_len;
  for (const auto& p : pairs) {
    ++per_problem[p.id.probid];
    src_len.push_back(tok::tokenize(p.pseudocode).size());
    tgt_len.push_back(tok::tokenize(p.code).size());
  }
  s.problems = per_problem.size();
  s.programs = pairs.size();
  for (const auto& [probid, n] : per_problem) ++s.histogram[n];
  s.mean_programs_per_problem = s.problems ? static_cast<double>(s.programs) / static_cast<double>(s.problems) : 0.0;
  s.pseudocode_tokens = percentiles(std::move(src_len));
  s.code_tokens = percentiles(std::move(tgt_len));
  return s;
}

nlohmann::json to_json(const CorpusStats& s) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [programs, problems] : s.histogram) hist.push_back({{"programs", programs}, {"problems", problems}});
  return {{"problems", s.problems},
          {"programs", s.programs},
          {"mean_programs_per_problem", s.mean_programs_per_problem},
          {"histogram", hist},
          {"pseudocode_tokens", to_json(s.pseudocode_tokens)},
          {"code_tokens", to_json(s.code_tokens)}};
}

nlohmann::json to_json(const ProgramPair& p) {
  nlohmann::json j;
  j["id"] = p.id.str();
  j["pseudocode"] = p.pseudocode;
  j["code"] = p.code;
  return j;
}

ProgramPair pair_from_json(const nlohmann::json& j) {
  return {ProgramKey::parse(j.at("id").get<std::string>()), j.at("pseudocode").get<std::string>(),
          j.at("code").get<std::string>()};
}

void write_jsonl(std::ostream& out, std::span<const ProgramPair> pairs) {
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["id"] = p.id.str();
    j["pseudocode"] = p.pseudocode;
    j["code"] = p.code;
    out << j.dump() << '\n';
  }
}

std::vector<ProgramPair> read_jsonl(std::istream& in) {
  std::vector<ProgramPair> pairs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      pairs.push_back(pair_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("jsonl line " + std::to_string(n) + ": " + e.what());
    }
  }
  return pairs;
}

std::string histogram_svg(const CorpusStats& s) {
  constexpr int kWidth = 640, kHeight = 320, kMargin = 40;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  svg << "<text x=\"" << kMargin << "\" y=\"20\" font-size=\"14\">programs per problem</text>\n";
  if (!s.histogram.empty()) {
    std::size_t peak = 0;
    for (const auto& [k, v] : s.histogram) peak = std::max(peak, v);
    const double bar = static_cast<double>(kWidth - 2 * kMargin) / static_cast<double>(s.histogram.size());
    const double plot_h = kHeight - 2 * kMargin;
    std::size_t i = 0;
    for (const auto& [programs, problems] : s.histogram) {
      const double h = plot_h * static_cast<double>(problems) / static_cast<double>(peak);
      const double x = kMargin + bar * static_cast<double>(i);
      svg << "<rect x=\"" << x << "\" y=\"" << (kHeight - kMargin - h) << "\" width=\"" << std::max(1.0, bar - 1)
          << "\" height=\"" << h << "\" fill=\"steelblue\"><title>" << programs << " programs: " << problems
          << " problems</title></rect>\n";
      ++i;
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace p2c::dataset
