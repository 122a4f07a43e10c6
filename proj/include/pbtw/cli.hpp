#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pbtw {

/// Exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line. argv[0] is the program name. Reads PBT_DATA_DIR and
/// PBT_RUNNER_CMD as defaults for --data-dir and --runner.
int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace pbtw
