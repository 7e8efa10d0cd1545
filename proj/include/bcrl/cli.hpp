#pragma once

#include <string>
#include <vector>

namespace bcrl::cli {

inline constexpr const char* kArtifactVersion = "1";

// Entry point shared by the binary and the tests.  argv excludes the program
// name.  Returns the process exit code: 0 iff no per-item failures.
int run_cli(const std::vector<std::string>& argv);

}  // namespace bcrl::cli
