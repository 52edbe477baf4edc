#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace p2c::dataset {

/// One row of a SPoC TSV file: a single pseudocode/code line of one submission.
struct SpocRecord {
  std::string text;
  std::string code;
  std::string workerid;
  std::string probid;
  std::string subid;
  std::size_t line = 0;
  std::size_t indent = 0;
};

struct ProgramKey {
  std::string probid;
  std::string subid;
  std::string workerid;

  auto operator<=>(const ProgramKey&) const = default;

  /// "probid:subid:workerid"
  std::string str() const;
  static ProgramKey parse(const std::string& s);
};

/// Whole-program training pair produced by aggregating one submission's rows.
struct ProgramPair {
  ProgramKey id;
  std::string pseudocode;
  std::string code;

  bool operator==(const ProgramPair&) const = default;
};

struct Diagnostics {
  std::vector<std::string> messages;
  std::size_t malformed_rows = 0;
  std::size_t dropped_groups = 0;
  std::size_t dropped_too_long = 0;
};

struct ParseResult {
  std::vector<SpocRecord> records;
  Diagnostics diagnostics;
};

/// Reads a tab-separated SPoC file. Column order comes from the header row.
/// Rows with the wrong column count are skipped and counted; a missing
/// required column throws MissingColumn.
ParseResult parse_spoc_tsv(std::istream& in);

std::vector<std::string> default_preamble();

struct AggregateOptions {
  std::vector<std::string> preamble = default_preamble();
  std::size_t indent_width = 4;
};

/// Groups rows by (probid, subid, workerid) and renders each group as one
/// pseudocode text and one C++ program prefixed with the header preamble.
/// Groups with a duplicated line index are dropped with a diagnostic.
std::vector<ProgramPair> aggregate_programs(std::span<const SpocRecord> records, Diagnostics& diag,
                                            const AggregateOptions& opts = {});

/// Drops pairs whose encoded length (tokens + START/END) exceeds max_positions.
std::vector<ProgramPair> filter_by_length(std::span<const ProgramPair> pairs, std::size_t max_positions,
                                          Diagnostics& diag);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct Corpus {
  std::vector<ProgramPair> train;
  std::vector<ProgramPair> validation;
  std::vector<ProgramPair> test;
  std::uint64_t split_seed = 0;

  bool operator==(const Corpus&) const = default;
};

/// Problem-disjoint split: probids are shuffled with the seed and partitioned
/// by ratio over the problem count. Throws InsufficientProblems below 3 problems.
Corpus split_corpus(std::span<const ProgramPair> pairs, SplitRatios ratios, std::uint64_t seed);

struct LengthPercentiles {
  std::size_t p50 = 0;
  std::size_t p90 = 0;
  std::size_t p99 = 0;
  std::size_t max = 0;
};

struct CorpusStats {
  std::size_t problems = 0;
  std::size_t programs = 0;
  double mean_programs_per_problem = 0.0;
  /// programs-per-problem -> number of problems with that many programs
  std::map<std::size_t, std::size_t> histogram;
  LengthPercentiles pseudocode_tokens;
  LengthPercentiles code_tokens;
};

CorpusStats corpus_stats(std::span<const ProgramPair> pairs);

nlohmann::json to_json(const CorpusStats& s);
nlohmann::json to_json(const ProgramPair& p);
ProgramPair pair_from_json(const nlohmann::json& j);

void write_jsonl(std::ostream& out, std::span<const ProgramPair> pairs);
std::vector<ProgramPair> read_jsonl(std::istream& in);

/// Minimal SVG bar chart of the programs-per-problem histogram.
std::string histogram_svg(const CorpusStats& s);

}  // namespace p2c::dataset
