#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "p2c/cppast.hpp"

namespace p2c::testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(P2C_FIXTURE_DIR) / name; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline const std::vector<std::string>& table3_names() {
  static const std::vector<std::string> names = {"addition_base",  "addition_codet5",  "largest_base",
                                                 "largest_codet5", "array_sum_base",   "array_sum_codet5",
                                                 "fibonacci_base", "fibonacci_codet5"};
  return names;
}

inline std::string table3(const std::string& name) { return read_file(fixture("table3/" + name + ".cpp")); }

/// Consistently renames every variable-like identifier (stream objects,
/// endl, std and main keep their names). Preserves line structure.
inline std::string alpha_rename(const std::string& code, const std::string& prefix = "v") {
  static const std::set<std::string> keep = {"cin", "cout", "cerr", "endl", "std", "main", "iostream", "string"};
  std::map<std::string, std::string> names;
  std::ostringstream out;
  std::size_t line = 1;
  bool include_line = false;
  for (const auto& t : cpp::lex_cpp(code)) {
    while (line < t.line) {
      out << '\n';
      ++line;
      include_line = false;
    }
    if (t.text == "#") include_line = true;
    std::string text = t.text;
    if (t.kind == cpp::TokenKind::Identifier && !keep.contains(text) && !include_line) {
      auto it = names.find(text);
      if (it == names.end()) it = names.emplace(text, prefix + std::to_string(names.size())).first;
      text = it->second;
    }
    out << text << ' ';
  }
  return out.str();
}

}  // namespace p2c::testing
