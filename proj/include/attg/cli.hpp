#pragma once

namespace attg {

// Entry point for the `attg` tool. Returns 0 on success, 2 on usage, validation, format, or
// I/O errors, and 3 on numerical failure.
int run_cli(int argc, char** argv);

}  // namespace attg
