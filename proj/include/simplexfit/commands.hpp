#ifndef SIMPLEXFIT_COMMANDS_HPP
#define SIMPLEXFIT_COMMANDS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "simplexfit/diagnostics.hpp"
#include "simplexfit/estimate.hpp"
#include "simplexfit/model.hpp"

namespace simplexfit::commands {

// Exit statuses shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNoConvergence = 4;
inline constexpr int kExitNumerical = 5;

struct RunConfig {
  std::string data_path;
  std::string response;
  model::ModelSpec spec;
  estimate::FitOptions fit_options;
  std::uint64_t seed = 0;
  std::string out_dir = ".";

  // envelope
  int envelope_replicates = 100;
  bool envelope_refit = true;

  // influence
  std::vector<diagnostics::Scheme> influence_schemes;
  std::vector<std::vector<std::size_t>> deletion_sets;  // 1-based in config, 0-based here

  // resolved echo of the full configuration, defaults filled in
  nlohmann::json echo;
};

// Parse and validate a run-configuration JSON document. ConfigError on any
// structural problem; formulas are parsed here so bad model text fails fast.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);

int cmd_fit(const RunConfig& cfg);
int cmd_envelope(const RunConfig& cfg);
int cmd_influence(const RunConfig& cfg);
// mc-study and simulate read their command-specific sections directly from
// the raw document (they do not require a data file).
int cmd_mc_study(const nlohmann::json& doc, std::uint64_t seed, const std::string& out_dir);
int cmd_simulate(const nlohmann::json& doc, std::uint64_t seed, const std::string& out_dir);

// Full CLI entry point: simplexfit <command> --config <path> [--seed N] [--out-dir D].
int run_cli(int argc, const char* const* argv);

}  // namespace simplexfit::commands

#endif
