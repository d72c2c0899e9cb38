#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace recur {

// Command-line entry point. `args` excludes the program name. Exit codes:
// 0 success, 2 partial (some fits failed), 1 usage or data error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace recur
