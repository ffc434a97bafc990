#pragma once

// Experiment configuration, validation and orchestration behind the `bpre`
// executable. A run is fully described by an ExperimentConfig; together
// with the binary version it fixes every CSV byte for byte.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace bpre {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitRuntimeError = 2,
  kExitAssertionFailed = 3,
};

struct ExperimentConfig {
  std::string command;
  std::string model = "uniform-unit";
  std::map<std::string, double> overrides;
  /// unset means the command's default grid
  std::optional<std::vector<std::size_t>> n_grid;
  /// 0 means the command's default
  std::uint64_t replicates = 0;
  std::uint64_t seed = 42;
  std::string output_dir = "runs";
  unsigned workers = 1;
  std::uint64_t block_size = 4096;
  /// assertion thresholds, e.g. {"slope_lo": -1.6, "slope_hi": -1.4}
  nlohmann::json tolerances = nlohmann::json::object();
  /// command-specific settings (delta, s_grid, depth, functional, ...)
  nlohmann::json params = nlohmann::json::object();
  /// exit with 3 when an acceptance assertion fails
  bool assertions = true;
};

const std::vector<std::string>& command_names();

nlohmann::json to_json(const ExperimentConfig& config);

/// Reads a config document. Field problems are appended to `errors` as
/// "field 'name': message"; the returned config holds whatever parsed.
ExperimentConfig config_from_json(const nlohmann::json& doc, std::vector<std::string>& errors);

/// Parses JSON text; syntax errors are reported with line and column.
std::optional<nlohmann::json> parse_config_text(const std::string& text,
                                                std::vector<std::string>& errors);

/// Schema and semantic checks without running anything. Empty when valid.
std::vector<std::string> validate(const ExperimentConfig& config);

struct RunResult {
  int exit_code = kExitOk;
  std::filesystem::path run_dir;
  nlohmann::json summary;
  std::vector<std::string> messages;
};

struct RunEnvironment {
  /// Use this directory instead of <output_dir>/<command>-<utc>-<hash>.
  std::optional<std::filesystem::path> run_dir;
};

/// Validates, executes and writes CSV, JSON (and JSONL) artifacts plus
/// manifest.json into the run directory.
RunResult run(const ExperimentConfig& config, const RunEnvironment& env = {});

/// `<command>-<YYYYmmddTHHMMSSZ>-<8 hex digits of the seed hash>`
std::string run_directory_name(const std::string& command, std::uint64_t seed);

/// Entry point of the executable: argv to exit status.
int main_entry(int argc, char** argv);

}  // namespace bpre
