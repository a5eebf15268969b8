#pragma once

#include <ostream>

namespace inkuba {

// Entry point of the `inkuba` binary. Results go to `out`, diagnostics and
// the resolved configuration to `err`. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace inkuba
