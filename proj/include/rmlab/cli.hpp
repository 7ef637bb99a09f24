#pragma once

namespace rmlab::cli {

// Parses argv, runs one subcommand, and maps failures to the process exit
// contract: 0 success, 1 usage or configuration error (with the expected
// schema printed), 2 runtime failure. Never calls exit() itself, so tests can
// drive it in-process.
int run(int argc, const char* const* argv);

}  // namespace rmlab::cli
