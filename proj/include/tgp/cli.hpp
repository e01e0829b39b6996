#pragma once

// Command-line front end: simulate, fit, velocity, dmw, metrics.
//
// Exit codes: 0 success, 2 usage, 3 bad input data, format or config,
// 4 numerical failure. Output files are written to a temporary sibling and
// renamed into place, so a failing command leaves nothing behind.

#include <filesystem>
#include <iosfwd>

namespace tgp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// `obs.csv` -> `obs.truth.csv`
std::filesystem::path truth_path_for(const std::filesystem::path& out);

}  // namespace tgp::cli
