#pragma once

#include <ostream>

namespace ccr {

// Entry point behind the `ccr` executable. Returns the process exit code:
// 0 on success, 1 with a one-line diagnostic on failure, 2 with usage text
// on a command-line error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ccr
