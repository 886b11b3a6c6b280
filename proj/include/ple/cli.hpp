#pragma once

#include <iosfwd>

namespace ple {

// Entry point of the `ple` tool. Exit status: 0 success, 1 a check or audit
// failed, 2 usage, configuration or data error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ple
