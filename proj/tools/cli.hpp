#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ate::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsageError = 2;

// Parses argv (argv[0] is the program name) and runs the subcommand.
// Progress goes to err unless --quiet; results and help go to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ate::cli
