#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bcmar::cli {

enum ExitCode : int {
  kSuccess = 0,
  kInternal = 1,
  kInputError = 2,
  kNotConverged = 3,
  kDegenerate = 4,
};

/// Runs one command line; report text goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bcmar::cli
