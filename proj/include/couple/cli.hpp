#pragma once

#include <string>
#include <vector>

namespace couple::cli {

// Exit codes: 0 success, 1 config error, 2 partial failures under --strict,
// 3 backend exhaustion.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitBackend = 3;

/// Runs one subcommand; arguments exclude the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace couple::cli
