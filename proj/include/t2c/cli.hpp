#pragma once

#include <ostream>
#include <string>

#include "json.hpp"

#include "t2c/config.hpp"

namespace t2c {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// Training run description: TrainConfig keys plus `src`, `tgt`, `out_dir`.
struct RunConfig {
  TrainConfig train;
  std::string src;
  std::string tgt;
  std::string out_dir;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Unknown keys are a FormatError; missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Entry point of the `t2c` tool. Failures print one `error: ...` line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace t2c
