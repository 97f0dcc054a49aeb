#pragma once

#include <iosfwd>

namespace yynet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

/// Entry point behind the yynet executable. Subcommands: train, eval,
/// inspect, ablate. Returns one of ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace yynet::cli
