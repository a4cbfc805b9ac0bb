#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tflow::cli {

enum ExitCode : int {
    kSuccess = 0,
    kUsageError = 1,
    kBudgetExhausted = 2,
    kInfeasible = 3,
};

/// Runs one command line (args[0] is the program name). Messages go to `err`, --print-config and
/// --help output to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tflow::cli
