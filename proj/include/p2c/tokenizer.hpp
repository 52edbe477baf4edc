#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace p2c::tok {

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kStart = 1;
inline constexpr std::int32_t kEnd = 2;
inline constexpr std::int32_t kUnk = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline constexpr std::string_view kNewline = "<NL>";

/// Splits on whitespace; operator and punctuation runs are emitted as separate
/// tokens by longest match against a fixed operator table; newlines become <NL>.
std::vector<std::string> tokenize(std::string_view text);

enum class Side { Source, Target };

struct TokenSequence {
  std::vector<std::int32_t> ids;
  Side side = Side::Source;
};

class Vocabulary {
 public:
  Vocabulary();

  /// Tokens with frequency >= min_count, ordered by (frequency desc, token asc)
  /// after the four specials. Throws EmptyCorpus when no text has any token.
  static Vocabulary build(std::span<const std::string> texts, std::size_t min_count = 1);

  std::size_t size() const { return id_to_token_.size(); }
  std::int32_t id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const;  // throws UnknownId
  std::span<const std::string> tokens() const { return id_to_token_; }

  /// {"specials": [...], "tokens": [...]} where "tokens" lists ids 4.. in order.
  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& o) const { return id_to_token_ == o.id_to_token_; }

 private:
  void add(std::string token);

  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

std::span<const std::string> special_tokens();

/// START + ids (UNK for out-of-vocabulary) + END.
TokenSequence encode(const Vocabulary& vocab, std::string_view text, Side side = Side::Source);

/// Joins tokens with single spaces, renders <NL> as a newline and strips specials.
std::string decode(const Vocabulary& vocab, std::span<const std::int32_t> ids);
inline std::string decode(const Vocabulary& vocab, const TokenSequence& seq) { return decode(vocab, seq.ids); }

/// Repairs the spacing of space-joined code tokens. Re-tokenizing the output
/// always yields the input's token list.
std::string postprocess_code(std::string_view spaced);

}  // namespace p2c::tok
