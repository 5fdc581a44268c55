#pragma once

#include <ostream>

namespace sgsd::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kConfig = 3,
  kRuntime = 4,
};

// Parses argv (argv[0] is the program name) and dispatches one command.
// Normal output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sgsd::cli
