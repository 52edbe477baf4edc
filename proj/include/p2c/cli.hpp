#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace p2c::cli {

enum ExitCode : int {
  kOk = 0,
  kInputError = 2,
  kSelfCheckFailed = 3,
  kRuntimeError = 4,
};

/// Runs one `p2c <command> ...` invocation. args excludes the program name.
/// Diagnostics go to err as single lines; command output goes to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace p2c::cli
