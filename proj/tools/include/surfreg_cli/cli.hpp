#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace surfreg::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kDataError = 3,
  kNumericError = 4,
  kVersionError = 5,
};

/// Runs one command line (args[0] is the program name). Artifacts go to the
/// named files, the summary line to `out`, and failures to `err` as a single
/// "error: <kind>: <message>" line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace surfreg::cli
