#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace risklab {

// Compact geometric grid syntax "lo:hi:xK": lo, lo*K, lo*K^2, ... while
// <= hi. K is an integer factor >= 2; lo >= 1. Throws UsageError on
// malformed input.
std::vector<std::size_t> parse_grid(const std::string& text);

// Command-line front end. Executes one subcommand, writes its outputs plus
// a manifest into the chosen directory, and returns the process exit code:
// 0 success, 1 usage error, 2 violated mathematical contract.
int run_cli(int argc, const char* const* argv);

}  // namespace risklab
