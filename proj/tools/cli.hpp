#pragma once

namespace gtree::cli {

/// Parses argv, runs one subcommand and returns the process exit code:
/// 0 success, 1 usage error, 2 data or validation error, 3 numeric failure.
int run(int argc, const char* const* argv);

}  // namespace gtree::cli
