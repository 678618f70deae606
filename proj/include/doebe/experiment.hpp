#pragma once

#include "doebe/data.hpp"
#include "doebe/hyperopt.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace doebe {

/// Version of config, metrics, summary and checkpoint files.
inline constexpr int kSchemaVersion = 1;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "DOEBE_OUTPUT_DIR";

struct DataSourceConfig {
  /// "csv", "friedman1", "friedman2", "drift" or "clusters".
  std::string source = "friedman1";
  std::string path;
  std::variant<std::string, int> target = -1;
  bool header = true;

  Index n = 2000;
  /// Generator seed; defaults to the experiment seed.
  std::optional<std::uint64_t> seed;
  /// Friedman noise sd (negative: conventional level) or cluster noise.
  double noise = -1.0;

  // drift: y = rff(x)' theta_t + eps, theta static until `onset`, then a walk.
  Index dim = 1;
  int features = 20;
  double lengthscale = 1.0;
  double walk_var = 1e-3;
  Index onset = 0;
  double noise_var = 0.25;

  // clusters
  bool ordered = false;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string name = "experiment";
  DataSourceConfig data;
  Index pretrain = 1000;
  bool standardize = true;
  EnsembleConfig ensemble;
  std::uint64_t seed = 0;
  /// Empty: $DOEBE_OUTPUT_DIR, else "results".
  std::string output_dir;
  /// Write one metrics row every this many steps (the final step is always written).
  Index trace_every = 1;
  /// 0 disables periodic checkpoints.
  Index checkpoint_every = 0;
};

/// Parses and validates a config. Unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& config);

/// FNV-1a 64 of the canonical config JSON (output location excluded), hex.
std::string config_hash(const ExperimentConfig& config);

Dataset load_stream(const ExperimentConfig& config);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  bool resume = false;
  /// Stop after this many streamed records, leaving a checkpoint (testing aid
  /// for interrupted runs).
  std::optional<Index> stop_after;
  std::ostream* log = nullptr;
};

struct RunSummary {
  std::string name;
  MetricValues metrics;
  Index steps = 0;
  Index experts = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  bool classification = false;
  std::filesystem::path out_dir;
  bool complete = true;
};

/// Pretrains on the first N0 records and streams the rest. Writes
/// metrics.csv, summary.json and (with checkpointing) checkpoint.json.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

std::filesystem::path resolve_output_dir(const ExperimentConfig& config, const RunOptions& options);

nlohmann::json summary_to_json(const RunSummary& summary);

struct ComparisonRow {
  std::string label;
  double nmse = 0.0;
  double pll = 0.0;
  std::optional<double> error_rate;
  bool best_nmse = false;
  bool best_pll = false;
};

/// Reads summary files; all must share one schema version.
std::vector<ComparisonRow> compare_summaries(const std::vector<std::filesystem::path>& files);
/// Aligned plain-text table; best entries are marked with '*'.
std::string render_table(const std::vector<ComparisonRow>& rows);

}  // namespace doebe
