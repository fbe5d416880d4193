// Command-line front end.  run_cli takes the argument list (without the
// program name) plus the two output streams, so tests can drive every
// subcommand in-process and capture what it prints.
//
// Exit codes: 0 success, 1 shape/contract/config/numeric errors (including
// a failing gradient check), 2 I/O and checkpoint errors.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tt {

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace tt
