#pragma once

#include <string>
#include <vector>

namespace mcss {

// Full command-line entry point, minus the program name. Returns the process
// exit code (0 success; 1 config, 2 I/O, 3 validation, 4 numeric, 5 batch).
int run_cli(const std::vector<std::string>& args);

}  // namespace mcss
