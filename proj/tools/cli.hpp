// Command-line driver. Split from main() so the argument handling and
// subcommand plumbing stay testable.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lodo {

/// Runs the `lodo` command line on `args` (without the program name),
/// writing regular output to `out` and diagnostics to `err`. Returns the
/// process exit code: 0 on success, nonzero on any validation failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace lodo
