#include "p2c/cppast.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <set>

namespace p2c::cpp {

namespace {

constexpr std::array<std::string_view, 52> kKeywords = {
    "auto",     "bool",   "break",    "case",    "catch",     "char",     "class",    "const",  "continue",
    "default",  "delete", "do",       "double",  "else",      "enum",     "extern",   "false",  "float",
    "for",      "friend", "goto",     "if",      "inline",    "int",      "long",     "namespace", "new",
    "nullptr",  "operator", "private", "protected", "public", "return",   "short",    "signed", "sizeof",
    "static",   "struct", "switch",   "template", "this",     "throw",    "true",     "try",    "typedef",
    "typename", "union",  "unsigned", "using",   "virtual",   "void",     "while"};

constexpr std::array<std::string_view, 25> kOperators = {"<<=", ">>=", "->*", "...", "::", "<<", ">>", "<=", ">=",
                                                         "==",  "!=",  "&&",  "||",  "++", "--", "+=", "-=", "*=",
                                                         "/=",  "%=",  "&=",  "|=",  "^=", "->", ".*"};

constexpr std::string_view kOperatorChars = "+-*/%=<>!&|^~?:.";
constexpr std::string_view kPunctuationChars = ";,(){}[]#";

bool ident_start(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z') || u == '_' || u >= 0x80;
}
bool digit(char c) { return c >= '0' && c <= '9'; }
bool ident_char(char c) { return ident_start(c) || digit(c); }

}  // namespace

bool is_keyword(std::string_view word) {
  return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

std::vector<CppToken> lex_cpp(std::string_view s) {
  std::vector<CppToken> out;
  std::size_t i = 0, line = 1, col = 1;
  const std::size_t n = s.size();
  auto advance = [&](std::size_t k) {
    for (std::size_t j = 0; j < k && i < n; ++j, ++i) {
      if (s[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  auto emit = [&](std::size_t start, TokenKind kind, std::size_t l, std::size_t c) {
    out.push_back({std::string(s.substr(start, i - start)), kind, l, c});
  };

  while (i < n) {
    const char c = s[i];
    const std::size_t start = i, l = line, cl = col;
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f') {
      advance(1);
    } else if (c == '/' && i + 1 < n && s[i + 1] == '/') {
      while (i < n && s[i] != '\n') advance(1);
    } else if (c == '/' && i + 1 < n && s[i + 1] == '*') {
      advance(2);
      while (i < n && !(s[i] == '*' && i + 1 < n && s[i + 1] == '/')) advance(1);
      advance(2);
    } else if (ident_start(c)) {
      while (i < n && ident_char(s[i])) advance(1);
      const auto word = s.substr(start, i - start);
      emit(start, is_keyword(word) ? TokenKind::Keyword : TokenKind::Identifier, l, cl);
    } else if (digit(c) || (c == '.' && i + 1 < n && digit(s[i + 1]))) {
      while (i < n) {
        const char d = s[i];
        if (ident_char(d) || d == '.') {
          advance(1);
        } else if ((d == '+' || d == '-') && (s[i - 1] == 'e' || s[i - 1] == 'E') && s[start] != '0') {
          advance(1);
        } else {
          break;
        }
      }
      emit(start, TokenKind::Number, l, cl);
    } else if (c == '"' || c == '\'') {
      advance(1);
      while (i < n && s[i] != c && s[i] != '\n') advance(s[i] == '\\' && i + 1 < n && s[i + 1] != '\n' ? 2 : 1);
      if (i < n && s[i] == c) advance(1);
      emit(start, TokenKind::StringLiteral, l, cl);
    } else {
      std::size_t len = 1;
      for (auto op : kOperators) {
        if (op.size() > len && s.substr(i, op.size()) == op) len = op.size();
      }
      advance(len);
      const bool op = len > 1 || kOperatorChars.find(c) != std::string_view::npos;
      emit(start, op ? TokenKind::Operator : TokenKind::Punctuation, l, cl);
    }
  }
  return out;
}

std::vector<std::string> code_tokens(std::string_view code) {
  std::vector<std::string> out;
  for (auto& t : lex_cpp(code)) out.push_back(std::move(t.text));
  return out;
}

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::TranslationUnit: return "TranslationUnit";
    case NodeKind::Include: return "Include";
    case NodeKind::Using: return "Using";
    case NodeKind::FunctionDef: return "FunctionDef";
    case NodeKind::ParamList: return "ParamList";
    case NodeKind::Block: return "Block";
    case NodeKind::Decl: return "Decl";
    case NodeKind::VarDecl: return "VarDecl";
    case NodeKind::ArrayDim: return "ArrayDim";
    case NodeKind::InitList: return "InitList";
    case NodeKind::Assign: return "Assign";
    case NodeKind::If: return "If";
    case NodeKind::For: return "For";
    case NodeKind::RangeFor: return "RangeFor";
    case NodeKind::While: return "While";
    case NodeKind::DoWhile: return "DoWhile";
    case NodeKind::Return: return "Return";
    case NodeKind::Break: return "Break";
    case NodeKind::Continue: return "Continue";
    case NodeKind::Empty: return "Empty";
    case NodeKind::Call: return "Call";
    case NodeKind::StreamIn: return "StreamIn";
    case NodeKind::StreamOut: return "StreamOut";
    case NodeKind::BinaryOp: return "BinaryOp";
    case NodeKind::UnaryOp: return "UnaryOp";
    case NodeKind::Ternary: return "Ternary";
    case NodeKind::Index: return "Index";
    case NodeKind::Member: return "Member";
    case NodeKind::Literal: return "Literal";
    case NodeKind::Ident: return "Ident";
    case NodeKind::ErrorNode: return "ErrorNode";
  }
  return "?";
}

std::size_t AstNode::node_count() const {
  std::size_t n = 1;
  for (const auto& c : children) n += c.node_count();
  return n;
}

std::size_t AstNode::error_count() const {
  std::size_t n = kind == NodeKind::ErrorNode ? 1 : 0;
  for (const auto& c : children) n += c.error_count();
  return n;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

constexpr std::array<std::string_view, 13> kTypeKeywords = {"int",    "long",   "short", "double", "float",
                                                            "char",   "bool",   "void",  "unsigned", "signed",
                                                            "const",  "static", "auto"};

constexpr std::array<std::string_view, 22> kTypeNames = {
    "string", "vector",        "map",           "set",      "pair",     "queue",    "stack",    "deque",
    "list",   "priority_queue", "unordered_map", "unordered_set", "multiset", "multimap", "size_t", "int64_t",
    "uint64_t", "int32_t",     "uint32_t",      "bitset",   "array",    "tuple"};

constexpr std::array<std::string_view, 11> kAssignOps = {"=", "+=", "-=", "*=", "/=", "%=",
                                                         "&=", "|=", "^=", "<<=", ">>="};

const std::array<std::vector<std::string_view>, 10> kBinaryLevels = {{
    {"||"},
    {"&&"},
    {"|"},
    {"^"},
    {"&"},
    {"==", "!="},
    {"<", ">", "<=", ">="},
    {"<<", ">>"},
    {"+", "-"},
    {"*", "/", "%"},
}};
constexpr std::size_t kShiftLevel = 7;

template <std::size_t N>
bool one_of(std::string_view s, const std::array<std::string_view, N>& set) {
  return std::find(set.begin(), set.end(), s) != set.end();
}

struct ParseError {
  std::size_t at;
  std::string message;
};

class Parser {
 public:
  explicit Parser(std::span<const CppToken> toks) : toks_(toks) {}

  ParseResult run() {
    ParseResult r;
    r.root.kind = NodeKind::TranslationUnit;
    while (!at_end()) r.root.children.push_back(guarded([this] { return item(); }));
    r.root.span = {0, toks_.size()};
    r.diagnostics = std::move(diags_);
    return r;
  }

 private:
  // -- token access ---------------------------------------------------------

  bool at_end(std::size_t k = 0) const { return pos_ + k >= toks_.size(); }
  std::string_view text(std::size_t k = 0) const { return at_end(k) ? std::string_view() : toks_[pos_ + k].text; }
  TokenKind kind(std::size_t k = 0) const { return at_end(k) ? TokenKind::Punctuation : toks_[pos_ + k].kind; }
  bool at(std::string_view t, std::size_t k = 0) const { return !at_end(k) && toks_[pos_ + k].text == t; }
  bool at_ident(std::size_t k = 0) const { return !at_end(k) && toks_[pos_ + k].kind == TokenKind::Identifier; }

  [[noreturn]] void fail(const std::string& what) const {
    const std::string found = at_end() ? "end of input" : "'" + toks_[pos_].text + "'";
    throw ParseError{pos_, "expected " + what + ", found " + found};
  }

  void expect(std::string_view t) {
    if (!at(t)) fail("'" + std::string(t) + "'");
    ++pos_;
  }

  bool accept(std::string_view t) {
    if (!at(t)) return false;
    ++pos_;
    return true;
  }

  AstNode node(NodeKind k, std::size_t begin, std::string label = {}) const {
    AstNode n;
    n.kind = k;
    n.label = std::move(label);
    n.span = {begin, pos_};
    return n;
  }

  void close(AstNode& n) const { n.span.end = pos_; }

  // -- error recovery -------------------------------------------------------

  template <class Fn>
  AstNode guarded(Fn&& fn) {
    const std::size_t start = pos_;
    try {
      return fn();
    } catch (const ParseError& e) {
      record(e);
      pos_ = std::max(pos_, start);
      synchronize(start);
      if (pos_ == start && !at_end()) ++pos_;
      AstNode err = node(NodeKind::ErrorNode, start);
      return err;
    }
  }

  void record(const ParseError& e) {
    Diagnostic d;
    d.token = e.at;
    if (e.at < toks_.size()) {
      d.line = toks_[e.at].line;
      d.column = toks_[e.at].column;
    } else if (!toks_.empty()) {
      d.line = toks_.back().line;
      d.column = toks_.back().column;
    }
    d.message = e.message;
    diags_.push_back(std::move(d));
  }

  // Skips to just past the next ';' or balanced '}' at the starting nesting
  // level, or stops before a '}' that closes an enclosing construct.
  void synchronize(std::size_t start) {
    long depth = 0;
    for (std::size_t k = start; k < pos_; ++k) {
      if (toks_[k].text == "{") ++depth;
      if (toks_[k].text == "}") depth = std::max(0L, depth - 1);
    }
    while (!at_end()) {
      if (at("{")) {
        ++depth;
      } else if (at("}")) {
        if (depth == 0) return;
        if (--depth == 0) {
          ++pos_;
          return;
        }
      } else if (at(";") && depth == 0) {
        ++pos_;
        return;
      }
      ++pos_;
    }
  }

  // -- declarations ---------------------------------------------------------

  bool known_type_name(std::string_view t) const { return one_of(t, kTypeNames); }

  bool type_start(std::size_t k = 0) const {
    if (at_end(k)) return false;
    const auto t = text(k);
    if (kind(k) == TokenKind::Keyword) return one_of(t, kTypeKeywords);
    if (kind(k) != TokenKind::Identifier) return false;
    if (known_type_name(t)) return !at("(", k + 1) && !at("::", k + 1) && !at(".", k + 1);
    if (t == "std" && at("::", k + 1)) return known_type_name(text(k + 2));
    // "T name" cannot start an expression
    return at_ident(k + 1) && (at("=", k + 2) || at(";", k + 2) || at(",", k + 2) || at("[", k + 2) ||
                               at("(", k + 2) || at(")", k + 2) || at(":", k + 2));
  }

  std::string type_spec() {
    std::string label;
    auto append = [&](std::string_view piece) {
      if (!label.empty() && label.back() != ':' && label.back() != '<' && piece != "::") label += ' ';
      label += piece;
    };
    bool have_base = false;
    while (!at_end()) {
      if (kind() == TokenKind::Keyword && one_of(text(), kTypeKeywords)) {
        append(text());
        ++pos_;
        have_base = true;
      } else if (!have_base && at_ident()) {
        if (at("std") && at("::", 1)) {
          label += "std::";
          pos_ += 2;
        }
        if (!at_ident()) fail("type name");
        append(text());
        ++pos_;
        have_base = true;
        if (at("<")) label += template_args();
      } else {
        break;
      }
    }
    if (!have_base) fail("type");
    while (at("*") || at("&") || at("&&")) {
      label += text();
      ++pos_;
    }
    return label;
  }

  std::string template_args() {
    std::string s;
    long depth = 0;
    do {
      const auto t = text();
      if (at_end() || t == ";" || t == "{" || t == "}") fail("'>' closing template arguments");
      if (t == "<") ++depth;
      if (t == ">") --depth;
      if (t == ">>") depth -= 2;
      s += t;
      ++pos_;
    } while (depth > 0);
    if (depth < 0) fail("balanced template arguments");
    return s;
  }

  AstNode ident() {
    const std::size_t begin = pos_;
    if (!at_ident()) fail("identifier");
    ++pos_;
    return node(NodeKind::Ident, begin, toks_[begin].text);
  }

  AstNode init_list() {
    const std::size_t begin = pos_;
    expect("{");
    AstNode list = node(NodeKind::InitList, begin, "brace");
    while (!at("}")) {
      list.children.push_back(at("{") ? init_list() : assignment());
      if (!accept(",")) break;
    }
    expect("}");
    close(list);
    return list;
  }

  AstNode var_decl() {
    const std::size_t begin = pos_;
    while (at("*") || at("&")) ++pos_;
    AstNode v = node(NodeKind::VarDecl, begin);
    v.children.push_back(ident());
    while (at("[")) {
      const std::size_t dim_begin = pos_;
      ++pos_;
      AstNode dim = node(NodeKind::ArrayDim, dim_begin);
      if (!at("]")) dim.children.push_back(expression());
      expect("]");
      close(dim);
      v.children.push_back(std::move(dim));
    }
    if (accept("=")) {
      v.children.push_back(at("{") ? init_list() : assignment());
    } else if (at("(")) {
      const std::size_t args_begin = pos_;
      ++pos_;
      AstNode args = node(NodeKind::InitList, args_begin, "paren");
      while (!at(")")) {
        args.children.push_back(assignment());
        if (!accept(",")) break;
      }
      expect(")");
      close(args);
      v.children.push_back(std::move(args));
    } else if (at("{")) {
      v.children.push_back(init_list());
    }
    close(v);
    return v;
  }

  AstNode declaration_body(std::size_t begin, std::string type) {
    AstNode d = node(NodeKind::Decl, begin, std::move(type));
    do {
      d.children.push_back(var_decl());
    } while (accept(","));
    close(d);
    return d;
  }

  AstNode param_list() {
    const std::size_t begin = pos_;
    expect("(");
    AstNode params = node(NodeKind::ParamList, begin);
    if (at("void") && at(")", 1)) ++pos_;
    while (!at(")")) {
      const std::size_t pbegin = pos_;
      const auto type = type_spec();
      AstNode p = node(NodeKind::Decl, pbegin, type);
      if (at_ident() || at("*") || at("&")) p.children.push_back(var_decl());
      close(p);
      params.children.push_back(std::move(p));
      if (!accept(",")) break;
    }
    expect(")");
    close(params);
    return params;
  }

  AstNode item() {
    const std::size_t begin = pos_;
    if (at("#")) {
      const std::size_t line = toks_[pos_].line;
      ++pos_;
      std::string label;
      while (!at_end() && toks_[pos_].line == line) label += toks_[pos_++].text;
      return node(NodeKind::Include, begin, label);
    }
    if (at("using")) {
      ++pos_;
      expect("namespace");
      AstNode u = node(NodeKind::Using, begin, "namespace");
      u.children.push_back(ident());
      expect(";");
      close(u);
      return u;
    }
    // Loose statements are accepted at file scope so snippets parse.
    if (!type_start()) return statement();
    const auto type = type_spec();
    if (at_ident() && at("(", 1)) {
      AstNode f = node(NodeKind::FunctionDef, begin, type);
      f.children.push_back(ident());
      f.children.push_back(param_list());
      if (!accept(";")) f.children.push_back(block());
      close(f);
      return f;
    }
    AstNode d = declaration_body(begin, type);
    expect(";");
    close(d);
    return d;
  }

  // -- statements -----------------------------------------------------------

  AstNode block() {
    const std::size_t begin = pos_;
    expect("{");
    AstNode b = node(NodeKind::Block, begin);
    while (!at("}")) {
      if (at_end()) {
        record({pos_, "expected '}' before end of input"});
        AstNode err = node(NodeKind::ErrorNode, pos_);
        b.children.push_back(std::move(err));
        close(b);
        return b;
      }
      b.children.push_back(guarded([this] { return statement(); }));
    }
    ++pos_;
    close(b);
    return b;
  }

  AstNode empty_node() const { return node(NodeKind::Empty, pos_); }

  AstNode condition() {
    expect("(");
    AstNode c = expression();
    expect(")");
    return c;
  }

  AstNode statement() {
    const std::size_t begin = pos_;
    if (at("{")) return block();
    if (accept("if")) {
      AstNode s = node(NodeKind::If, begin);
      s.children.push_back(condition());
      s.children.push_back(guarded([this] { return statement(); }));
      if (accept("else")) s.children.push_back(guarded([this] { return statement(); }));
      close(s);
      return s;
    }
    if (accept("for")) return for_statement(begin);
    if (accept("while")) {
      AstNode s = node(NodeKind::While, begin);
      s.children.push_back(condition());
      s.children.push_back(guarded([this] { return statement(); }));
      close(s);
      return s;
    }
    if (accept("do")) {
      AstNode s = node(NodeKind::DoWhile, begin);
      s.children.push_back(guarded([this] { return statement(); }));
      expect("while");
      s.children.push_back(condition());
      expect(";");
      close(s);
      return s;
    }
    if (accept("return")) {
      AstNode s = node(NodeKind::Return, begin);
      if (!at(";")) s.children.push_back(expression());
      expect(";");
      close(s);
      return s;
    }
    if (accept("break")) {
      expect(";");
      return node(NodeKind::Break, begin);
    }
    if (accept("continue")) {
      expect(";");
      return node(NodeKind::Continue, begin);
    }
    if (accept(";")) return node(NodeKind::Empty, begin);
    if (type_start()) {
      auto type = type_spec();
      AstNode d = declaration_body(begin, std::move(type));
      expect(";");
      close(d);
      return d;
    }
    AstNode e = expression();
    expect(";");
    return e;
  }

  AstNode for_statement(std::size_t begin) {
    expect("(");
    AstNode init;
    if (at(";")) {
      init = empty_node();
    } else if (type_start()) {
      const std::size_t dbegin = pos_;
      auto type = type_spec();
      if (at_ident() && at(":", 1)) {
        AstNode var = node(NodeKind::VarDecl, pos_);
        var.children.push_back(ident());
        close(var);
        AstNode decl = node(NodeKind::Decl, dbegin, std::move(type));
        decl.children.push_back(std::move(var));
        expect(":");
        AstNode s = node(NodeKind::RangeFor, begin);
        s.children.push_back(std::move(decl));
        s.children.push_back(expression());
        expect(")");
        s.children.push_back(guarded([this] { return statement(); }));
        close(s);
        return s;
      }
      init = declaration_body(dbegin, std::move(type));
    } else {
      init = expression();
    }
    expect(";");
    AstNode cond = at(";") ? empty_node() : expression();
    expect(";");
    AstNode step = at(")") ? empty_node() : expression();
    expect(")");
    AstNode s = node(NodeKind::For, begin);
    s.children.push_back(std::move(init));
    s.children.push_back(std::move(cond));
    s.children.push_back(std::move(step));
    s.children.push_back(guarded([this] { return statement(); }));
    close(s);
    return s;
  }

  // -- expressions ----------------------------------------------------------

  AstNode expression() {
    AstNode left = assignment();
    while (at(",")) {
      ++pos_;
      AstNode right = assignment();
      left = binary(",", std::move(left), std::move(right));
    }
    return left;
  }

  AstNode binary(std::string op, AstNode l, AstNode r) const {
    AstNode n;
    n.kind = NodeKind::BinaryOp;
    n.label = std::move(op);
    n.span = {l.span.begin, r.span.end};
    n.children.push_back(std::move(l));
    n.children.push_back(std::move(r));
    return n;
  }

  AstNode assignment() {
    AstNode left = ternary();
    if (!at_end() && one_of(text(), kAssignOps)) {
      std::string op(text());
      ++pos_;
      AstNode right = assignment();
      AstNode n;
      n.kind = NodeKind::Assign;
      n.label = std::move(op);
      n.span = {left.span.begin, right.span.end};
      n.children.push_back(std::move(left));
      n.children.push_back(std::move(right));
      return n;
    }
    return left;
  }

  AstNode ternary() {
    AstNode c = binary_level(0);
    if (!at("?")) return c;
    ++pos_;
    AstNode a = expression();
    expect(":");
    AstNode b = assignment();
    AstNode n;
    n.kind = NodeKind::Ternary;
    n.span = {c.span.begin, b.span.end};
    n.children.push_back(std::move(c));
    n.children.push_back(std::move(a));
    n.children.push_back(std::move(b));
    return n;
  }

  AstNode binary_level(std::size_t level) {
    if (level == kBinaryLevels.size()) return unary();
    AstNode left = binary_level(level + 1);
    const auto& ops = kBinaryLevels[level];
    while (!at_end() && std::find(ops.begin(), ops.end(), text()) != ops.end()) {
      std::string op(text());
      ++pos_;
      AstNode right = binary_level(level + 1);
      left = binary(std::move(op), std::move(left), std::move(right));
    }
    if (level == kShiftLevel) return lower_stream(std::move(left));
    return left;
  }

  // cin >> a >> b and cout << x << y become flat StreamIn/StreamOut nodes.
  static AstNode lower_stream(AstNode n) {
    if (n.kind != NodeKind::BinaryOp || (n.label != "<<" && n.label != ">>")) return n;
    const std::string op = n.label;
    std::vector<AstNode> operands;
    AstNode* cur = &n;
    while (cur->kind == NodeKind::BinaryOp && cur->label == op) {
      operands.push_back(std::move(cur->children[1]));
      cur = &cur->children[0];
    }
    const bool in = op == ">>" && cur->kind == NodeKind::Ident && (cur->label == "cin" || cur->label == "std::cin");
    const bool out = op == "<<" && cur->kind == NodeKind::Ident &&
                     (cur->label == "cout" || cur->label == "cerr" || cur->label == "std::cout" ||
                      cur->label == "std::cerr");
    if (!in && !out) {
      // restore: rebuild the left-associative chain
      AstNode rebuilt = std::move(*cur);
      while (!operands.empty()) {
        AstNode r = std::move(operands.back());
        operands.pop_back();
        AstNode b;
        b.kind = NodeKind::BinaryOp;
        b.label = op;
        b.span = {rebuilt.span.begin, r.span.end};
        b.children.push_back(std::move(rebuilt));
        b.children.push_back(std::move(r));
        rebuilt = std::move(b);
      }
      return rebuilt;
    }
    AstNode s;
    s.kind = in ? NodeKind::StreamIn : NodeKind::StreamOut;
    s.span = n.span;
    AstNode stream = std::move(*cur);
    s.children.push_back(std::move(stream));
    for (auto it = operands.rbegin(); it != operands.rend(); ++it) s.children.push_back(std::move(*it));
    return s;
  }

  AstNode unary() {
    const std::size_t begin = pos_;
    static constexpr std::array<std::string_view, 8> kPrefix = {"++", "--", "!", "-", "+", "~", "*", "&"};
    if (!at_end() && kind() == TokenKind::Operator && one_of(text(), kPrefix)) {
      std::string op(text());
      ++pos_;
      AstNode operand = unary();
      AstNode n = node(NodeKind::UnaryOp, begin, std::move(op));
      n.children.push_back(std::move(operand));
      return n;
    }
    if (accept("sizeof")) {
      AstNode n = node(NodeKind::UnaryOp, begin, "sizeof");
      if (at("(") && type_start(1)) {
        ++pos_;
        n.label += "(" + type_spec() + ")";
        expect(")");
      } else {
        n.children.push_back(unary());
      }
      close(n);
      return n;
    }
    if (at("(") && kind(1) == TokenKind::Keyword && one_of(text(1), kTypeKeywords)) {
      ++pos_;
      const auto type = type_spec();
      expect(")");
      AstNode operand = unary();
      AstNode n = node(NodeKind::UnaryOp, begin, "cast:" + type);
      n.children.push_back(std::move(operand));
      return n;
    }
    return postfix();
  }

  AstNode postfix() {
    AstNode e = primary();
    while (true) {
      const std::size_t begin = e.span.begin;
      if (at("(")) {
        ++pos_;
        AstNode call;
        call.kind = NodeKind::Call;
        call.children.push_back(std::move(e));
        while (!at(")")) {
          call.children.push_back(assignment());
          if (!accept(",")) break;
        }
        expect(")");
        call.span = {begin, pos_};
        e = std::move(call);
      } else if (at("[")) {
        ++pos_;
        AstNode idx;
        idx.kind = NodeKind::Index;
        idx.children.push_back(std::move(e));
        idx.children.push_back(expression());
        expect("]");
        idx.span = {begin, pos_};
        e = std::move(idx);
      } else if (at("++") || at("--")) {
        AstNode u;
        u.kind = NodeKind::UnaryOp;
        u.label = "post" + std::string(text());
        ++pos_;
        u.children.push_back(std::move(e));
        u.span = {begin, pos_};
        e = std::move(u);
      } else if (at(".") || at("->")) {
        AstNode m;
        m.kind = NodeKind::Member;
        m.label = std::string(text());
        ++pos_;
        m.children.push_back(std::move(e));
        m.children.push_back(ident());
        m.span = {begin, pos_};
        e = std::move(m);
      } else {
        return e;
      }
    }
  }

  AstNode primary() {
    const std::size_t begin = pos_;
    if (at_end()) fail("expression");
    const auto& tok = toks_[pos_];
    if (tok.kind == TokenKind::Identifier || at("::")) {
      std::string name;
      if (accept("::")) name = "::";
      if (!at_ident()) fail("identifier");
      name += text();
      ++pos_;
      while (at("::") && at_ident(1)) {
        name += "::";
        name += text(1);
        pos_ += 2;
      }
      return node(NodeKind::Ident, begin, std::move(name));
    }
    if (tok.kind == TokenKind::Number) {
      ++pos_;
      return node(NodeKind::Literal, begin, "number");
    }
    if (tok.kind == TokenKind::StringLiteral) {
      const bool is_char = tok.text.front() == '\'';
      ++pos_;
      while (!is_char && !at_end() && kind() == TokenKind::StringLiteral && text().front() == '"') ++pos_;
      return node(NodeKind::Literal, begin, is_char ? "char" : "string");
    }
    if (at("true") || at("false")) {
      ++pos_;
      return node(NodeKind::Literal, begin, "bool");
    }
    if (at("nullptr")) {
      ++pos_;
      return node(NodeKind::Literal, begin, "null");
    }
    if (tok.kind == TokenKind::Keyword && one_of(tok.text, kTypeKeywords) && at("(", 1)) {
      // functional cast: double(x)
      ++pos_;
      return node(NodeKind::Ident, begin, tok.text);
    }
    if (at("(")) {
      ++pos_;
      AstNode inner = expression();
      expect(")");
      return inner;
    }
    if (at("{")) return init_list();
    fail("expression");
  }

  std::span<const CppToken> toks_;
  std::size_t pos_ = 0;
  std::vector<Diagnostic> diags_;
};

}  // namespace

ParseResult parse_cpp_subset(std::span<const CppToken> tokens) { return Parser(tokens).run(); }

ParseResult parse_cpp(std::string_view code) {
  const auto tokens = lex_cpp(code);
  return parse_cpp_subset(tokens);
}

// ---------------------------------------------------------------------------
// Subtree fingerprints

namespace {

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool label_in_fingerprint(NodeKind k) { return k != NodeKind::Ident && k != NodeKind::Using; }

Fingerprint collect(const AstNode& n, std::size_t min_nodes, SubtreeMultiset* out, std::size_t& count) {
  std::uint64_t h = mix(0x51ED270B27C3ULL + static_cast<std::uint64_t>(n.kind));
  if (label_in_fingerprint(n.kind)) h = mix(h ^ hash_string(n.label));
  count = 1;
  std::uint64_t position = 0;
  for (const auto& c : n.children) {
    std::size_t child_count = 0;
    const auto child = collect(c, min_nodes, out, child_count);
    count += child_count;
    h = mix(h + 0x9E3779B97F4A7C15ULL * ++position + child);
  }
  h = mix(h ^ n.children.size());
  if (out && count >= min_nodes) ++(*out)[h];
  return h;
}

}  // namespace

Fingerprint fingerprint(const AstNode& node) {
  std::size_t count = 0;
  return collect(node, 0, nullptr, count);
}

SubtreeMultiset enumerate_subtrees(const AstNode& root, std::size_t min_nodes) {
  SubtreeMultiset m;
  std::size_t count = 0;
  collect(root, min_nodes, &m, count);
  return m;
}

std::size_t multiset_size(const SubtreeMultiset& m) {
  std::size_t n = 0;
  for (const auto& [fp, c] : m) n += c;
  return n;
}

// ---------------------------------------------------------------------------
// Dataflow

std::string_view to_string(DefKind k) {
  switch (k) {
    case DefKind::Declaration: return "declaration";
    case DefKind::Assignment: return "assignment";
    case DefKind::StreamIn: return "stream_in";
    case DefKind::LoopInit: return "loop_init";
    case DefKind::Update: return "update";
  }
  return "?";
}

std::string_view to_string(UseKind k) {
  switch (k) {
    case UseKind::Expression: return "expression";
    case UseKind::StreamOut: return "stream_out";
    case UseKind::Condition: return "condition";
    case UseKind::Index: return "index";
  }
  return "?";
}

std::map<EdgeKey, std::size_t> DataflowGraph::edge_multiset() const {
  std::map<EdgeKey, std::size_t> m;
  for (const auto& e : edges) ++m[{e.variable, e.def_kind, e.use_kind, e.loop_carried}];
  return m;
}

namespace {

class FlowBuilder {
 public:
  DataflowGraph run(const AstNode& root) {
    statement(root);
    DataflowGraph g;
    for (auto& e : edges_) {
      e.variable = normalized_.at(e.variable);
      g.edges.push_back(std::move(e));
    }
    for (const auto& name : order_) g.normalization.emplace_back(name, normalized_.at(name));
    return g;
  }

 private:
  struct Def {
    Span site;
    DefKind kind;
    std::size_t seq;
  };
  struct HeaderUse {
    std::string name;
    Span site;
    UseKind kind;
  };

  void use(const std::string& name, Span site, UseKind kind) {
    if (capture_) capture_->push_back({name, site, kind});
    auto it = last_def_.find(name);
    if (it == last_def_.end()) return;
    const Def& d = it->second;
    edges_.push_back({name, d.site, site, d.kind, kind, d.site.begin > site.begin});
  }

  void define(const std::string& name, Span site, DefKind kind) {
    if (!normalized_.contains(name)) {
      normalized_[name] = "var_" + std::to_string(order_.size());
      order_.push_back(name);
    }
    last_def_[name] = {site, kind, seq_++};
  }

  void loop_back_edges(const std::vector<HeaderUse>& header, std::size_t loop_seq) {
    for (const auto& u : header) {
      auto it = last_def_.find(u.name);
      if (it == last_def_.end() || it->second.seq < loop_seq) continue;
      edges_.push_back({u.name, it->second.site, u.site, it->second.kind, u.kind, true});
    }
  }

  std::vector<HeaderUse> captured(const AstNode& n, UseKind kind) {
    std::vector<HeaderUse> header;
    auto* saved = capture_;
    capture_ = &header;
    expression(n, kind);
    capture_ = saved;
    if (capture_) capture_->insert(capture_->end(), header.begin(), header.end());
    return header;
  }

  void statement(const AstNode& n) {
    switch (n.kind) {
      case NodeKind::TranslationUnit:
      case NodeKind::Block:
        for (const auto& c : n.children) statement(c);
        break;
      case NodeKind::FunctionDef:
        for (const auto& c : n.children) {
          if (c.kind == NodeKind::Block) statement(c);
        }
        break;
      case NodeKind::Decl:
        declaration(n, DefKind::Declaration);
        break;
      case NodeKind::If:
        expression(n.children[0], UseKind::Condition);
        for (std::size_t i = 1; i < n.children.size(); ++i) statement(n.children[i]);
        break;
      case NodeKind::For: {
        const auto& init = n.children[0];
        if (init.kind == NodeKind::Decl) {
          declaration(init, DefKind::LoopInit);
        } else {
          expression(init, UseKind::Expression, DefKind::LoopInit);
        }
        const std::size_t loop_seq = seq_;
        auto header = captured(n.children[1], UseKind::Condition);
        statement(n.children[3]);
        expression(n.children[2], UseKind::Expression, DefKind::Update);
        loop_back_edges(header, loop_seq);
        break;
      }
      case NodeKind::RangeFor: {
        expression(n.children[1], UseKind::Expression);
        for (const auto& v : n.children[0].children) define(v.children[0].label, v.span, DefKind::LoopInit);
        statement(n.children[2]);
        break;
      }
      case NodeKind::While: {
        const std::size_t loop_seq = seq_;
        auto header = captured(n.children[0], UseKind::Condition);
        statement(n.children[1]);
        loop_back_edges(header, loop_seq);
        break;
      }
      case NodeKind::DoWhile:
        statement(n.children[0]);
        expression(n.children[1], UseKind::Condition);
        break;
      case NodeKind::Return:
        for (const auto& c : n.children) expression(c, UseKind::Expression);
        break;
      case NodeKind::Include:
      case NodeKind::Using:
      case NodeKind::ParamList:
      case NodeKind::Empty:
      case NodeKind::Break:
      case NodeKind::Continue:
      case NodeKind::ErrorNode:
        break;
      default:
        expression(n, UseKind::Expression);
        break;
    }
  }

  void declaration(const AstNode& decl, DefKind kind) {
    for (const auto& v : decl.children) {
      if (v.kind != NodeKind::VarDecl || v.children.empty()) continue;
      bool initialized = false;
      for (std::size_t i = 1; i < v.children.size(); ++i) {
        const auto& c = v.children[i];
        if (c.kind == NodeKind::ArrayDim) {
          for (const auto& d : c.children) expression(d, UseKind::Index);
        } else {
          expression(c, UseKind::Expression);
          initialized = true;
        }
      }
      if (initialized) define(v.children[0].label, v.span, kind);
    }
  }

  // Marks the variable written by an assignment target and records reads
  // made while locating it (subscripts).
  void target(const AstNode& lhs, DefKind kind, Span site) {
    switch (lhs.kind) {
      case NodeKind::Ident:
        define(lhs.label, site, kind);
        break;
      case NodeKind::Index:
        expression(lhs.children[1], UseKind::Index);
        target(lhs.children[0], kind, site);
        break;
      case NodeKind::Member:
        target(lhs.children[0], kind, site);
        break;
      default:
        expression(lhs, UseKind::Expression);
        break;
    }
  }

  static const AstNode* base_variable(const AstNode& n) {
    if (n.kind == NodeKind::Ident) return &n;
    if ((n.kind == NodeKind::Index || n.kind == NodeKind::Member) && !n.children.empty()) {
      return base_variable(n.children[0]);
    }
    return nullptr;
  }

  void expression(const AstNode& n, UseKind ctx, DefKind assign_kind = DefKind::Assignment) {
    switch (n.kind) {
      case NodeKind::Ident:
        use(n.label, n.span, ctx);
        break;
      case NodeKind::Literal:
      case NodeKind::ErrorNode:
      case NodeKind::Empty:
        break;
      case NodeKind::Assign: {
        const auto& lhs = n.children[0];
        if (n.label == "=") {
          expression(n.children[1], ctx);
          target(lhs, assign_kind, lhs.span);
        } else {
          if (const auto* base = base_variable(lhs)) use(base->label, lhs.span, ctx);
          expression(n.children[1], ctx);
          target(lhs, DefKind::Update, lhs.span);
        }
        break;
      }
      case NodeKind::StreamIn:
        for (std::size_t i = 1; i < n.children.size(); ++i) target(n.children[i], DefKind::StreamIn, n.children[i].span);
        break;
      case NodeKind::StreamOut:
        for (std::size_t i = 1; i < n.children.size(); ++i) expression(n.children[i], UseKind::StreamOut);
        break;
      case NodeKind::UnaryOp: {
        const bool step = n.label == "++" || n.label == "--" || n.label == "post++" || n.label == "post--";
        if (step && !n.children.empty()) {
          const auto& operand = n.children[0];
          if (const auto* base = base_variable(operand)) use(base->label, operand.span, ctx);
          target(operand, DefKind::Update, operand.span);
        } else {
          for (const auto& c : n.children) expression(c, ctx);
        }
        break;
      }
      case NodeKind::Index:
        expression(n.children[0], ctx);
        expression(n.children[1], UseKind::Index);
        break;
      case NodeKind::Member:
        expression(n.children[0], ctx);
        break;
      case NodeKind::Call:
        if (n.children[0].kind != NodeKind::Ident) expression(n.children[0], ctx);
        for (std::size_t i = 1; i < n.children.size(); ++i) expression(n.children[i], ctx);
        break;
      case NodeKind::Decl:
        declaration(n, assign_kind);
        break;
      default:
        for (const auto& c : n.children) expression(c, ctx, assign_kind);
        break;
    }
  }

  std::map<std::string, Def> last_def_;
  std::map<std::string, std::string> normalized_;
  std::vector<std::string> order_;
  std::vector<DataflowEdge> edges_;
  std::vector<HeaderUse>* capture_ = nullptr;
  std::size_t seq_ = 0;
};

}  // namespace

DataflowGraph extract_dataflow(const AstNode& root) { return FlowBuilder().run(root); }

nlohmann::json to_json(const AstNode& node) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(node.kind));
  if (!node.label.empty()) j["label"] = node.label;
  j["span"] = {node.span.begin, node.span.end};
  if (!node.children.empty()) {
    j["children"] = nlohmann::json::array();
    for (const auto& c : node.children) j["children"].push_back(to_json(c));
  }
  return j;
}

nlohmann::json to_json(const DataflowGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges) {
    edges.push_back({{"variable", e.variable},
                     {"def", {e.def_site.begin, e.def_site.end}},
                     {"use", {e.use_site.begin, e.use_site.end}},
                     {"def_kind", std::string(to_string(e.def_kind))},
                     {"use_kind", std::string(to_string(e.use_kind))},
                     {"loop_carried", e.loop_carried}});
  }
  nlohmann::json norm = nlohmann::json::object();
  for (const auto& [src, var] : g.normalization) norm[src] = var;
  return {{"edges", edges}, {"normalization", norm}};
}

}  // namespace p2c::cpp
