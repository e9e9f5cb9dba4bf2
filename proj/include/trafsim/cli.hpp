#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace trafsim {

// Exit codes: 0 success, 1 usage error, 2 input error, 3 invariant violation.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// Subcommand names, in help order.
std::vector<std::string> cli_commands();

}  // namespace trafsim
