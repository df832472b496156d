#pragma once

#include <iosfwd>

namespace lrds {

/// Entry point of the lrds command line tool, with its streams injectable for
/// testing. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lrds
