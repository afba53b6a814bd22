#pragma once

#include <iosfwd>

namespace ordergap {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIncomplete = 3;
inline constexpr int kExitBackend = 4;

// Entry point of the `ordergap` command. Never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ordergap
