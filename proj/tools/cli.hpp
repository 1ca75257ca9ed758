#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace camid::cli {

/// Exit codes: 0 success, 1 usage/IO/config/data errors, 2 curation kept
/// nothing.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitEmpty = 2;

/// Runs the tool on argv-style arguments (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace camid::cli
