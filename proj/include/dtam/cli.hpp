#pragma once

#include <iosfwd>

namespace dtam {

// Exit codes of the command-line tool.
enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Runs one subcommand (ingest, train, gridsearch, eval, predict, topics,
// timeline, sample). Reports go to out, progress and errors to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dtam
