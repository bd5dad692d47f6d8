#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xtalgen {

inline constexpr const char* kToolVersion = "0.1.0";

// Runs the `xtalgen` command line. `args` excludes the program name.
// Returns the process exit code: 0 success, 2 config error, 3 data error,
// 4 numeric failure, 1 anything else.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// 16 hex digits of FNV-1a over the bytes.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace xtalgen
