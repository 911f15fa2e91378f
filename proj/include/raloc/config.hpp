#pragma once

// JSON configuration for the estimator and the simulator. Parsing is strict:
// unknown keys and type mismatches raise ConfigError naming the field path
// (e.g. "ufls.gate", "anchors[2].position").
//
// Environment overrides: RALOC_EST__UFLS__GATE=0.6 sets ufls.gate of the
// estimator config, RALOC_SIM__SEED=3 the scenario seed. Path segments are
// separated by "__" and lower-cased; the value is parsed as JSON when
// possible and taken as a string otherwise.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "raloc/pipeline.hpp"
#include "raloc/sim.hpp"

namespace raloc {

inline constexpr const char* kEstimatorEnvPrefix = "RALOC_EST__";
inline constexpr const char* kScenarioEnvPrefix = "RALOC_SIM__";

struct EstimatorConfig {
  std::vector<Anchor> anchors;
  PipelineConfig pipeline;
};

/// Throws IoError when unreadable, ConfigError on a syntax error.
nlohmann::json load_json_file(const std::filesystem::path& path);

/// Applies NAME=VALUE pairs whose name starts with `prefix`.
void apply_overrides(nlohmann::json& config, const std::string& prefix,
                     const std::vector<std::pair<std::string, std::string>>& variables);
/// Same, from the process environment.
void apply_env_overrides(nlohmann::json& config, const std::string& prefix);

EstimatorConfig parse_estimator_config(const nlohmann::json& j);
nlohmann::json to_json(const EstimatorConfig& config);

/// A "preset" key selects the base scenario; other keys override it.
/// Without a preset, anchors and waypoints are required.
Scenario parse_scenario(const nlohmann::json& j);
nlohmann::json to_json(const Scenario& scenario);

}  // namespace raloc
