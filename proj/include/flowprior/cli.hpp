#pragma once

#include <iosfwd>

namespace flowprior {

// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Whole command line, argv[0] included. Never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace flowprior
