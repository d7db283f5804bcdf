#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nmt::cli {

// Exit codes: 0 success, 1 bad data, 2 usage or file system error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

// args[0] is the program name. Data goes to `out` or to files, diagnostics
// to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nmt::cli
