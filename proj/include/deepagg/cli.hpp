#pragma once

#include <string>
#include <vector>

namespace deepagg {

// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

// Full command line entry point; args exclude the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace deepagg
