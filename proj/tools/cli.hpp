#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tunein::cli {

enum ExitCode { ok = 0, failure = 1, invalid_config = 2, missing_file = 3, numerical = 4 };

// Full command line (argv[0] is the program name). Human or JSON output goes
// to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tunein::cli
