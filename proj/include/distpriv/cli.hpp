#pragma once

#include <iosfwd>

namespace distpriv {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,       // bad arguments or unreadable input
  kExitInfeasible = 2,  // request rejected or instance infeasible
  kExitLimit = 3,       // exact solver limits or budgets exceeded
};

/// Entry point of the `distpriv` command: solve, simulate, privacy, compare.
/// Relative input paths that do not exist are also looked up under $DISTPRIV_DATA_DIR.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace distpriv
