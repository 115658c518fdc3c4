#pragma once

#include <iosfwd>

namespace mtpc {

// Exit codes: 0 success, 1 configuration or runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Quick oracle-equivalence, reduction, losslessness and greedy-identity
// checks; prints one line per check and returns 0 when all pass.
int run_selftest(std::ostream& out);

}  // namespace mtpc
