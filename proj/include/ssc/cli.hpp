#pragma once

#include <iosfwd>

namespace ssc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvariantFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInternal = 3;

// Entry point of the `ssc` tool: run, check, eval, export, gen.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ssc
