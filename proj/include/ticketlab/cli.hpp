#pragma once

#include <string>
#include <vector>

namespace ticketlab {

// Full command-line entry point, callable in-process. Returns the process
// exit code: 0 success, 2 config error, 3 data error, 4 numeric abort.
int run_cli(int argc, const char* const* argv);

// Convenience wrapper; args exclude the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace ticketlab
