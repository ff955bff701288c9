#pragma once

#include <iosfwd>

namespace stackgame {

enum ExitCode {
    exit_ok = 0,
    exit_error = 1,
    exit_validation = 2,
    exit_not_converged = 3,
    exit_io = 4,
};

/// Subcommands: validate, solve-aol, solve-aclm, riccati, simulate, verify, oracle-compare.
/// Summaries go to --out and to `out`; error payloads are JSON on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stackgame
