#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobkit/baseline.hpp"
#include "mobkit/dataset.hpp"
#include "mobkit/eval.hpp"
#include "mobkit/gateway.hpp"
#include "mobkit/ingest.hpp"
#include "mobkit/synthetic.hpp"

namespace mobkit {

struct DatasetSpec {
  std::string tag;
  DataFamily family = DataFamily::gps;
  TaskKind task = TaskKind::gps_location;
  /// Exactly one of input / synthetic is set.
  std::optional<std::filesystem::path> input;
  std::optional<SyntheticProfile> synthetic;
  double cell_m = 500.0;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  WindowConfig window;
  double test_fraction = 0.2;
  std::vector<DatasetSpec> datasets;

  int n_styles = 1;
  std::optional<std::string> teacher;

  DatasetFormat format = DatasetFormat::alpaca_jsonl;
  std::optional<std::size_t> cap;

  bool predict = false;
  std::optional<std::string> predict_endpoint;
  std::optional<BaselineKind> predict_baseline;

  std::optional<double> base_acc;

  /// Endpoint tables as written, before ${VAR} interpolation.
  std::map<std::string, json> endpoints;

  /// Parsed config with sorted keys, before interpolation; the hash covers exactly this.
  json canonical;
  std::string config_hash;
};

/// Parses TOML text and validates it completely. Relative paths resolve against `base_dir`.
/// Throws ConfigError.
PipelineConfig parse_pipeline_config(std::string_view toml_text, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Replaces every ${NAME} with the environment value. Throws ConfigError for unset variables.
std::string interpolate_env(std::string_view text);

/// Resolved endpoint for `name`. Teacher endpoints default to temperature 0.3 when unset.
EndpointConfig resolve_endpoint(const PipelineConfig& cfg, const std::string& name, bool teacher_role);

struct ArtifactRef {
  std::string path;  ///< Relative to the run directory.
  std::string sha256;
};

struct StageRecord {
  std::string stage;
  /// "ran", "cached", "skipped" or "failed".
  std::string status;
  std::string input_hash;
  std::vector<ArtifactRef> inputs;
  std::vector<ArtifactRef> outputs;
  std::string started_at;
  std::string finished_at;
  std::uint64_t endpoint_requests = 0;
  Usage usage;
  std::optional<double> cost_usd;
  std::string error;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<StageRecord> stages;
  std::uint64_t endpoint_requests = 0;

  const StageRecord* find(std::string_view stage) const;
};

json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const json& j);

inline constexpr std::string_view kStageNames[] = {"ingest", "forge-styles", "assemble", "predict", "evaluate"};

struct RunOptions {
  /// Ignore cached stages.
  bool force = false;
};

/// ingest -> forge-styles -> assemble -> predict -> evaluate inside cfg.out_dir. A stage whose input
/// hash and outputs match the previous manifest is reported cached and not re-run. On failure the
/// manifest records the partial run and the error is rethrown.
RunManifest run_pipeline(const PipelineConfig& cfg, const RunOptions& options = {});

struct ScenarioRow {
  std::string scenario;
  double acc = 0.0;
  double base_acc = 0.0;
  double delta_acc = 0.0;
};

/// One relative-change row per scenario report against `base`.
std::vector<ScenarioRow> scenario_eval(const EvaluationReport& base,
                                       std::span<const std::pair<std::string, EvaluationReport>> scenarios);
ordered_json scenario_rows_to_json(std::span<const ScenarioRow> rows);
std::string scenario_table(std::span<const ScenarioRow> rows);

/// Base-template prompts for prediction.
std::vector<std::string> prediction_prompts(std::span<const PredictionInstance> instances);
/// Sends prompts through `gateway` and parses the replies; failures become transport_error.
std::vector<PredictionOutcome> predict_with_endpoint(Gateway& gateway, std::span<const PredictionInstance> instances);

}  // namespace mobkit
