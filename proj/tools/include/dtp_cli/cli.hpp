#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dtp::cli {

// Stable exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // bad or missing flags, size mismatch
inline constexpr int kExitIo = 3;       // unreadable input, malformed weight file, write failure
inline constexpr int kExitNumeric = 4;  // non-finite loss during optimization

/// Entry point shared by the binary and the tests. args excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dtp::cli
