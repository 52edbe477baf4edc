#include "p2c/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "p2c/errors.hpp"

namespace p2c::tok {

namespace {

constexpr std::array<std::string_view, 4> kSpecialNames = {"<PAD>", "<START>", "<END>", "<UNK>"};

// Longest-match table; anything not listed is a single-character token.
constexpr std::array<std::string_view, 30> kOperators = {
    "<<=", ">>=", "...", "->*", "::", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "++", "--",
    "+=",  "-=",  "*=",  "/=",  "%=", "&=", "|=", "^=", "->", ".*", "##", "<:", ":>", "<%", "%>"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

bool is_word(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z') || u == '_' || u >= 0x80;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_identifier(std::string_view t) {
  return !t.empty() && is_word(t.front()) && !is_digit(t.front()) && t != kNewline;
}

bool is_word_token(std::string_view t) { return !t.empty() && is_word(t.front()); }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (c == '\n') {
      out.emplace_back(kNewline);
      ++i;
    } else if (is_space(c)) {
      ++i;
    } else if (is_word(c)) {
      const std::size_t start = i;
      const bool numeric = is_digit(c);
      while (i < n && (is_word(text[i]) || (numeric && text[i] == '.' && i + 1 < n && is_digit(text[i + 1])))) ++i;
      out.emplace_back(text.substr(start, i - start));
    } else {
      std::size_t len = 1;
      for (auto op : kOperators) {
        if (op.size() > len && text.substr(i, op.size()) == op) len = op.size();
      }
      out.emplace_back(text.substr(i, len));
      i += len;
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (auto s : kSpecialNames) add(std::string(s));
}

void Vocabulary::add(std::string token) {
  const auto id = static_cast<std::int32_t>(id_to_token_.size());
  auto [it, inserted] = token_to_id_.emplace(token, id);
  if (!inserted) throw InputError("duplicate vocabulary token: " + token);
  id_to_token_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t min_count) {
  if (min_count < 1) throw InputError("min_count must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts) {
    for (auto& token : tokenize(t)) ++freq[std::move(token)];
  }
  if (freq.empty()) throw EmptyCorpus("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : freq) {
    if (count >= min_count) ranked.emplace_back(token, count);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  for (auto& [token, count] : ranked) v.add(std::move(token));
  return v;
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.contains(std::string(token)); }

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw UnknownId("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  j["specials"] = std::vector<std::string>(id_to_token_.begin(), id_to_token_.begin() + kNumSpecials);
  j["tokens"] = std::vector<std::string>(id_to_token_.begin() + kNumSpecials, id_to_token_.end());
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.contains("specials") || !j.contains("tokens")) throw InputError("vocabulary JSON needs specials and tokens");
  const auto specials = j.at("specials").get<std::vector<std::string>>();
  if (specials.size() != kNumSpecials || !std::equal(specials.begin(), specials.end(), kSpecialNames.begin())) {
    throw InputError("vocabulary JSON has unexpected special tokens");
  }
  Vocabulary v;
  for (auto token : j.at("tokens").get<std::vector<std::string>>()) v.add(std::move(token));
  return v;
}

std::span<const std::string> special_tokens() {
  static const std::vector<std::string> names(kSpecialNames.begin(), kSpecialNames.end());
  return names;
}

TokenSequence encode(const Vocabulary& vocab, std::string_view text, Side side) {
  TokenSequence seq;
  seq.side = side;
  const auto tokens = tokenize(text);
  seq.ids.reserve(tokens.size() + 2);
  seq.ids.push_back(kStart);
  for (const auto& t : tokens) seq.ids.push_back(vocab.id(t));
  seq.ids.push_back(kEnd);
  return seq;
}

std::string decode(const Vocabulary& vocab, std::span<const std::int32_t> ids) {
  std::string out;
  bool line_start = true;
  for (auto id : ids) {
    const auto& t = vocab.token(id);
    if (static_cast<std::size_t>(id) < kNumSpecials) continue;
    if (t == kNewline) {
      out += '\n';
      line_start = true;
      continue;
    }
    if (!line_start) out += ' ';
    out += t;
    line_start = false;
  }
  return out;
}

namespace {

bool is_control_keyword(std::string_view t) {
  return t == "if" || t == "for" || t == "while" || t == "switch" || t == "return" || t == "catch" ||
         t == "else" || t == "do" || t == "case";
}

bool ends_operand(std::string_view t) { return is_word_token(t) || t == ")" || t == "]"; }

// Decides whether the space between two adjacent tokens on one line can go.
class LineSpacer {
 public:
  explicit LineSpacer(const std::vector<std::string>& tokens) : tokens_(tokens) {
    include_line_ = tokens.size() >= 2 && tokens[0] == "#" && (tokens[1] == "include" || tokens[1] == "import");
  }

  std::string render() {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (i > 0 && !glue(i)) out += ' ';
      out += tokens_[i];
      track_quotes(tokens_[i]);
    }
    return out;
  }

 private:
  void track_quotes(std::string_view t) {
    if (t == "\"" && !in_char_) {
      in_string_ = !in_string_;
      just_opened_ = in_string_;
    } else if (t == "'" && !in_string_) {
      in_char_ = !in_char_;
      just_opened_ = in_char_;
    } else {
      just_opened_ = false;
    }
  }

  bool glue(std::size_t i) const {
    const std::string& a = tokens_[i - 1];
    const std::string& b = tokens_[i];
    if (!wanted(i, a, b)) return false;
    return tokenize(a + b) == std::vector<std::string>{a, b};
  }

  bool wanted(std::size_t i, std::string_view a, std::string_view b) const {
    if (in_string_ || in_char_) {
      if (just_opened_) return true;
      if ((b == "\"" && in_string_) || (b == "'" && in_char_)) return true;
      return a == "\\";
    }
    if (include_line_) return i == 1 || i > 2;
    if (a == "#") return true;
    if (b == ";" || b == "," || b == ")" || b == "]") return true;
    if (a == "(" || a == "[") return true;
    if (a == "::" || b == "::") return true;
    if (b == "(" && is_identifier(a) && !is_control_keyword(a)) return true;
    if (b == "[" && ends_operand(a)) return true;
    if ((b == "++" || b == "--") && ends_operand(a)) return true;
    if ((a == "++" || a == "--") && is_word_token(b) && !(i >= 2 && ends_operand(tokens_[i - 2]))) return true;
    if ((b == "." || b == "->") && ends_operand(a)) return true;
    if ((a == "." || a == "->") && is_identifier(b)) return true;
    if (a == "!" || a == "~") return true;
    return false;
  }

  const std::vector<std::string>& tokens_;
  bool include_line_ = false;
  bool in_string_ = false;
  bool in_char_ = false;
  bool just_opened_ = false;
};

std::string join_plain(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::string postprocess_code(std::string_view spaced) {
  std::string out;
  std::size_t start = 0;
  while (true) {
    const auto nl = spaced.find('\n', start);
    const auto line = spaced.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    const auto tokens = tokenize(line);
    std::string rendered = LineSpacer(tokens).render();
    // Pairwise checks can miss three-token merges such as ". . ." -> "...".
    if (tokenize(rendered) != tokens) rendered = join_plain(tokens);
    out += rendered;
    if (nl == std::string_view::npos) break;
    out += '\n';
    start = nl + 1;
  }
  return out;
}

}  // namespace p2c::tok
