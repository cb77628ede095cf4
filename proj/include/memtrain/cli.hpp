#pragma once

#include <string>
#include <vector>

namespace memtrain {

// Command-line entry point (train / infer / transfer-eval / energy-report).
// Returns 0 on success, 2 on configuration errors, 3 on data errors.
int run_cli(const std::vector<std::string>& args);

} // namespace memtrain
