#pragma once

#include <iosfwd>

namespace cal {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "CAL_OUT_DIR";

// Subcommands: encode, decode, fit-gmm, train-toy, sweep, ablate, eval.
// Errors are reported on `err` as a single JSON line.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cal
