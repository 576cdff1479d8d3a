#pragma once

#include <string>
#include <vector>

namespace patrec::cli {

// Runs the command line given argv-style arguments (excluding the program
// name). Returns the process exit code: 0 success, 2 configuration error,
// 3 missing dependency, 4 data error.
int run(const std::vector<std::string>& args);

}  // namespace patrec::cli
