#pragma once

#include <iosfwd>

namespace fsdepth::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

/// Parses argv (argv[0] is the program name) and runs one command.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fsdepth::cli
