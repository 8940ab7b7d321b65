#pragma once

// Command-line front end. Every command writes its outputs and a
// manifest.json under --out-dir; `replay` re-runs a manifest and compares
// output digests.

#include <iosfwd>
#include <string>
#include <vector>

namespace llrkit::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes: 0 success, 1 a requested verification failed, 2 error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace llrkit::cli
