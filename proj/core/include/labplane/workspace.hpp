#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "labplane/compat.hpp"
#include "labplane/types.hpp"

namespace labplane {

/// A versioned workspace recipe.
struct Template {
  std::string name;
  std::string image_tag;
  ResourceSpec resources;
  std::vector<std::string> mounts;
  std::map<std::string, std::string> node_selector;
  int version = 0;

  bool operator==(const Template&) const = default;
};

enum class WorkspaceState { kPending, kPulling, kInitializing, kRunning, kStopped, kDeleted, kFailed };
enum class StartCondition { kCold, kWarm };

std::string_view to_string(WorkspaceState state) noexcept;
WorkspaceState workspace_state_from_string(std::string_view text);
std::string_view to_string(StartCondition condition) noexcept;

/// The only edges the lifecycle may take.
///
///   Pending      -> Pulling | Initializing | Failed
///   Pulling      -> Initializing | Failed
///   Initializing -> Running | Failed
///   Running      -> Stopped | Failed
///   Stopped      -> Pending | Deleted
///   Failed       -> Pending | Deleted
///
/// Pending -> Initializing is the warm start, which skips the image pull.
bool is_legal_transition(WorkspaceState from, WorkspaceState to) noexcept;
std::span<const WorkspaceState> legal_successors(WorkspaceState from) noexcept;

/// States in which the workspace occupies a node.
constexpr bool holds_node(WorkspaceState s) noexcept {
  return s == WorkspaceState::kPulling || s == WorkspaceState::kInitializing ||
         s == WorkspaceState::kRunning;
}

struct TransitionRecord {
  WorkspaceState state;
  Timestamp at;

  bool operator==(const TransitionRecord&) const = default;
};

struct Workspace {
  std::string workspace_id;
  std::string owner;
  std::string template_name;
  int template_version = 0;
  std::string image_tag;
  ResourceSpec resources;
  std::vector<std::string> mounts;
  std::map<std::string, std::string> node_selector;
  WorkspaceState state = WorkspaceState::kPending;
  std::optional<std::string> node_id;
  std::optional<StartCondition> start_condition;
  std::vector<TransitionRecord> transition_log;
  // Timer for leaving Pulling/Initializing.
  std::optional<Timestamp> phase_due;
  // Set when a host driver change left the running image unsupported.
  bool compat_flagged = false;
  std::string failure_reason;

  Timestamp created_at() const { return transition_log.front().at; }
  /// Timestamp at which the current state was entered.
  Timestamp entered_at() const { return transition_log.back().at; }

  bool operator==(const Workspace&) const = default;
};

enum class LifecycleEvent {
  kScheduledCold,  // assigned to a node without the image cached
  kScheduledWarm,  // assigned to a node that already holds the image
  kImagePulled,
  kInitialized,
  kStop,
  kRestart,
  kRebuild,
  kDelete,
  kFail,
};

std::string_view to_string(LifecycleEvent event) noexcept;
WorkspaceState target_state(LifecycleEvent event) noexcept;

/// Applies one lifecycle event to the FSM. Scheduling events need `node_id`.
/// Throws kIllegalTransition and leaves the workspace untouched when the edge is not legal.
WorkspaceState advance(Workspace& ws, LifecycleEvent event, Timestamp at,
                       std::string_view node_id = {});

/// Upper bounds applied to every template's resource request.
struct WorkspaceLimits {
  ResourceSpec max_resources{64000, 256 * kGiB, 4};

  bool operator==(const WorkspaceLimits&) const = default;
};

/// Templates by name. Saving an existing name bumps its version.
class TemplateCatalog {
 public:
  /// Validates against the registry and limits, assigns the next version, returns the stored copy.
  Template prepare(Template tmpl, const ImageRegistry& registry, const WorkspaceLimits& limits) const;
  void store(Template tmpl);

  const Template* find(const std::string& name) const;
  const Template& at(const std::string& name) const;
  const std::map<std::string, Template>& templates() const noexcept { return templates_; }

 private:
  std::map<std::string, Template> templates_;
};

void validate_resources(const ResourceSpec& request, const WorkspaceLimits& limits);

NLOHMANN_JSON_SERIALIZE_ENUM(WorkspaceState, {
                                                 {WorkspaceState::kPending, "Pending"},
                                                 {WorkspaceState::kPulling, "Pulling"},
                                                 {WorkspaceState::kInitializing, "Initializing"},
                                                 {WorkspaceState::kRunning, "Running"},
                                                 {WorkspaceState::kStopped, "Stopped"},
                                                 {WorkspaceState::kDeleted, "Deleted"},
                                                 {WorkspaceState::kFailed, "Failed"},
                                             })

NLOHMANN_JSON_SERIALIZE_ENUM(StartCondition, {
                                                 {StartCondition::kCold, "Cold"},
                                                 {StartCondition::kWarm, "Warm"},
                                             })

void to_json(nlohmann::json& j, const TransitionRecord& r);
void from_json(const nlohmann::json& j, TransitionRecord& r);
void to_json(nlohmann::json& j, const Template& t);
void from_json(const nlohmann::json& j, Template& t);
void to_json(nlohmann::json& j, const Workspace& w);
void from_json(const nlohmann::json& j, Workspace& w);
void to_json(nlohmann::json& j, const WorkspaceLimits& l);
void from_json(const nlohmann::json& j, WorkspaceLimits& l);

}  // namespace labplane
