#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

namespace kneeatt {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs `kneeatt <command> ...` in-process. Subcommands: gendata, train,
/// gridsearch, eval.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Relative output paths are placed under $KNEEATT_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_path(const std::filesystem::path& path);

}  // namespace kneeatt
