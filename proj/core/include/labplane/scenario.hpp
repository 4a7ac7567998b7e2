#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "labplane/control_plane.hpp"

namespace labplane {

/// Parses "90", "45s", "30m", "12h", "7d" and concatenations such as "1h30m".
Seconds parse_duration(std::string_view text);
/// Accepts a JSON number (seconds) or a duration string.
Seconds duration_from_json(const nlohmann::json& j);
std::string format_duration(Seconds s);

struct WorkloadSpec {
  std::string template_name;
  std::vector<std::string> researchers;  // empty means every scenario researcher
  WorkloadProfile profile = default_workload_profile();
  Seconds horizon = 7 * kDay;

  bool operator==(const WorkloadSpec&) const = default;
};

/// One scripted command. `at` is relative to the scenario start; `args`
/// holds the op-specific fields.
struct ScenarioAction {
  Seconds at = 0;
  std::string op;
  nlohmann::json args = nlohmann::json::object();

  bool operator==(const ScenarioAction&) const = default;
};

struct ScenarioConfig {
  std::string name;
  AllocationMode mode = AllocationMode::kShared;
  ControlConfig config;
  std::vector<ImageSpec> images;
  std::vector<Node> nodes;
  std::vector<Template> templates;
  std::vector<std::string> researchers;
  std::vector<WorkloadSpec> workloads;
  std::vector<FaultSpec> faults;
  std::vector<ScenarioAction> actions;
  std::optional<Seconds> until;

  bool operator==(const ScenarioConfig&) const = default;
};

void to_json(nlohmann::json& j, const WorkloadSpec& w);
void from_json(const nlohmann::json& j, WorkloadSpec& w);
void to_json(nlohmann::json& j, const ScenarioAction& a);
void from_json(const nlohmann::json& j, ScenarioAction& a);
void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

/// Checks every cross-reference. Throws Error(kInvalidArgument) naming the
/// first one that does not resolve; the field is a JSON path into the scenario.
void validate_scenario(const ScenarioConfig& config);

/// Parses and validates. Nothing is built when this throws.
ScenarioConfig load_scenario(const std::filesystem::path& path);
ScenarioConfig parse_scenario(const nlohmann::json& j);

/// Registers images, nodes, templates and faults, sets the mode and attaches workloads.
ControlPlane build_control_plane(const ScenarioConfig& config, EventLog::Sink sink = {});

struct ActionResult {
  std::size_t index = 0;
  std::string op;
  Timestamp at = 0;
  bool ok = true;
  std::string error_code;
  std::string message;
  // Workspace id created by the action, if any.
  std::optional<std::string> workspace_id;
};

struct ScenarioOutcome {
  std::vector<ActionResult> actions;
  std::size_t failed_actions() const;
};

/// Executes the action script against `cp`, advancing the clock between
/// actions, then advances to start + `until` (if later). Actions after the
/// horizon are skipped. A failing action is recorded and the script continues.
ScenarioOutcome run_scenario(ControlPlane& cp, const ScenarioConfig& config, std::optional<Seconds> until);

void to_json(nlohmann::json& j, const ActionResult& r);

}  // namespace labplane
