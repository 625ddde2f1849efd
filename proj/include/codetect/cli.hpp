#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace codetect {

/// Command-line driver: build-dataset, train, eval, sweep, audit-labels.
/// Returns the process exit code (0 success, 1 usage/config error, 2 runtime
/// failure). `args` excludes the program name. All output goes to the given
/// streams so tests can run commands in-process.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace codetect
