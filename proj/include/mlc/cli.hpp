#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mlc {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumerical = 4,
};

/// Runs one `mlc` command. `args` excludes the program name. Command
/// results are written to `out` as one JSON line; a failure writes
/// {"error": kind, "message": text} as one line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlc
