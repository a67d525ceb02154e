#pragma once

// Subcommands of the `gaf` tool. Each returns a process exit code:
// 0 success, 2 usage or input error, 3 numerical failure.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gaf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

inline constexpr const char* kToolVersion = "gaf 0.1.0";

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::string dataset_checksum;
  std::string tool_version = kToolVersion;
  double duration_seconds = 0.0;
  std::vector<std::string> outputs;

  nlohmann::ordered_json to_json() const;
};

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

// "runs/model.json" + ".metrics.jsonl" -> "runs/model.metrics.jsonl"
std::filesystem::path derived_path(const std::filesystem::path& base, const std::string& suffix);

struct GenerateOptions {
  std::optional<std::filesystem::path> spec;  // defaults when absent
  std::filesystem::path out;                  // directory
};

struct TrainOptions {
  std::filesystem::path config;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::vector<double> thresholds;
  bool oracle = false;  // score the ground truth itself
  std::optional<std::filesystem::path> out;
};

struct AblateOptions {
  std::filesystem::path config;
};

struct ExportPlotsOptions {
  std::filesystem::path history;
  std::filesystem::path out_dir;
};

int cmd_generate(const GenerateOptions& opts);
int cmd_train(const TrainOptions& opts);
int cmd_eval(const EvalOptions& opts);
int cmd_ablate(const AblateOptions& opts);
int cmd_export_plots(const ExportPlotsOptions& opts);

// Parses "0.3,0.5" style lists. Throws ContractError.
std::vector<double> parse_thresholds(const std::string& text);

// Full command line, including argv[0].
int run(int argc, char** argv);

}  // namespace gaf::cli
