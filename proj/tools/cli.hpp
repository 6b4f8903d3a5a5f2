#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace drformer {

// Entry point of the drformer command line; returns the process exit code
// (0 success, 1 runtime failure, 2 usage or config error).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace drformer
