#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"

namespace p2c::cpp {

enum class TokenKind { Keyword, Identifier, Number, StringLiteral, Operator, Punctuation };

struct CppToken {
  std::string text;
  TokenKind kind = TokenKind::Punctuation;
  std::size_t line = 1;
  std::size_t column = 1;

  bool operator==(const CppToken& o) const { return text == o.text && kind == o.kind; }
};

bool is_keyword(std::string_view word);

/// Longest-match lexer; comments are dropped, unknown bytes become punctuation.
std::vector<CppToken> lex_cpp(std::string_view code);

/// Token texts only, as used by the n-gram metrics.
std::vector<std::string> code_tokens(std::string_view code);

enum class NodeKind {
  TranslationUnit,
  Include,
  Using,
  FunctionDef,
  ParamList,
  Block,
  Decl,
  VarDecl,
  ArrayDim,
  InitList,
  Assign,
  If,
  For,
  RangeFor,
  While,
  DoWhile,
  Return,
  Break,
  Continue,
  Empty,
  Call,
  StreamIn,
  StreamOut,
  BinaryOp,
  UnaryOp,
  Ternary,
  Index,
  Member,
  Literal,
  Ident,
  ErrorNode,
};

std::string_view to_string(NodeKind k);

/// Half-open token range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  auto operator<=>(const Span&) const = default;
};

/// label carries the non-identifier detail of a node: operator text, type
/// name, literal category (number/string/char/bool), include target. For
/// Ident it holds the name, which fingerprints ignore.
struct AstNode {
  NodeKind kind = NodeKind::ErrorNode;
  std::string label;
  std::vector<AstNode> children;
  Span span;

  std::size_t node_count() const;
  std::size_t error_count() const;
};

struct Diagnostic {
  std::size_t token = 0;
  std::size_t line = 0;
  std::size_t column = 0;
  std::string message;
};

struct ParseResult {
  AstNode root;
  std::vector<Diagnostic> diagnostics;
};

/// Total parser: every input yields a TranslationUnit. Unparseable runs become
/// ErrorNodes and parsing resumes after the next `;` (or balanced `}`) at the
/// nesting level where the error began, or before an unmatched `}`.
ParseResult parse_cpp_subset(std::span<const CppToken> tokens);
ParseResult parse_cpp(std::string_view code);

using Fingerprint = std::uint64_t;
using SubtreeMultiset = std::map<Fingerprint, std::size_t>;

/// Structural hash over (kind, label, child fingerprints); identifier names are
/// excluded and literals contribute only their category.
Fingerprint fingerprint(const AstNode& node);

/// Fingerprints of every rooted subtree with at least min_nodes nodes.
SubtreeMultiset enumerate_subtrees(const AstNode& root, std::size_t min_nodes = 2);

std::size_t multiset_size(const SubtreeMultiset& m);

enum class DefKind { Declaration, Assignment, StreamIn, LoopInit, Update };
enum class UseKind { Expression, StreamOut, Condition, Index };

std::string_view to_string(DefKind k);
std::string_view to_string(UseKind k);

struct DataflowEdge {
  std::string variable;  // normalized: var_0, var_1, ...
  Span def_site;
  Span use_site;
  DefKind def_kind = DefKind::Assignment;
  UseKind use_kind = UseKind::Expression;
  bool loop_carried = false;
};

/// Name-free identity of an edge, used for matching across programs.
using EdgeKey = std::tuple<std::string, DefKind, UseKind, bool>;

struct DataflowGraph {
  std::vector<DataflowEdge> edges;
  /// source name -> normalized name, in first-definition order
  std::vector<std::pair<std::string, std::string>> normalization;

  std::map<EdgeKey, std::size_t> edge_multiset() const;
};

/// Def-use edges linking each use to the nearest preceding definition of the
/// same variable in program order; loop conditions also receive loop-carried
/// edges from the last definition inside the loop. ErrorNodes contribute nothing.
DataflowGraph extract_dataflow(const AstNode& root);

nlohmann::json to_json(const AstNode& node);
nlohmann::json to_json(const DataflowGraph& g);

}  // namespace p2c::cpp
