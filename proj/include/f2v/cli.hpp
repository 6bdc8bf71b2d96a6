#pragma once

namespace f2v {

/// Command-line driver. Returns 0 on success, 1 for usage/configuration
/// errors and 2 for runtime failures.
int run_cli(int argc, char** argv);

}  // namespace f2v
