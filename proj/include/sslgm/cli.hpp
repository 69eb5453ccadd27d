#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace sslgm::cli {

/// Exit codes of the command-line tool.
inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kRuntime = 2;

/// Full default configuration of a subcommand (generate, fit, score, eval).
nlohmann::json default_config(const std::string& command);

/// Overlays `file` and then `flags` on the defaults. Keys absent from the
/// defaults are rejected with ConfigError, as are type mismatches.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& file, const nlohmann::json& flags);

void cmd_generate(const nlohmann::json& config);
void cmd_fit(const nlohmann::json& config);
void cmd_score(const nlohmann::json& config);
void cmd_eval(const nlohmann::json& config);

/// Parses arguments, runs the subcommand and maps errors to exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sslgm::cli
