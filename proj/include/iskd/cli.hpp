#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "iskd/experiments.hpp"

namespace iskd::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,    // bad flags, unknown subcommand
  kConfig = 2,   // config file or override rejected
  kRuntime = 3,  // I/O, numeric or data failure during the run
};

/// Parses `args` (argv without the program name) and runs the subcommand.
/// Diagnostics go to `err`, summaries to `out`.
int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// Builds table rows from run directories (or report.json paths). Each ISKD
/// report becomes a row; baselines attach to the first row with the same
/// dataset and architecture. Unmatched baselines are reported on `warn`.
std::vector<ReportRow> collect_report_rows(std::span<const std::filesystem::path> runs,
                                           std::ostream& warn);

}  // namespace iskd::cli
