#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "labplane/cluster.hpp"
#include "labplane/compat.hpp"
#include "labplane/event_log.hpp"
#include "labplane/healthcheck.hpp"
#include "labplane/scheduler.hpp"
#include "labplane/simulation.hpp"
#include "labplane/workspace.hpp"

namespace labplane {

/// Tunables recorded in the first event of every log.
struct ControlConfig {
  Timestamp start_time = 0;
  // Cold start = pull + init; warm start = init.
  Seconds image_pull_seconds = 282;
  Seconds init_seconds = 18;
  WorkspaceLimits limits;
  // Move a workspace to Failed when its start-time health check fails.
  bool fail_on_unhealthy = false;
  // Shared mode: stop a workload workspace after this long without jobs.
  Seconds idle_stop_seconds = 15 * kMinute;
  std::optional<std::size_t> image_cache_capacity;
  std::map<std::string, PipelineConfig> pipelines = default_pipelines();

  bool operator==(const ControlConfig&) const = default;
};

struct ActiveJob {
  std::string job_id;
  std::string workspace_id;
  std::string owner;
  std::string node_id;
  Timestamp start = 0;
  Timestamp end = 0;
  double util_percent = 0;
  int exit_code = 0;
  bool from_workload = false;

  bool operator==(const ActiveJob&) const = default;
};

struct PipelineInFlight {
  std::string pipeline_id;
  PipelineRun run;
  Timestamp started_at = 0;
  Timestamp due = 0;

  bool operator==(const PipelineInFlight&) const = default;
};

/// Workload-driver bookkeeping for one researcher.
struct RunnerResearcher {
  std::optional<std::string> workspace_id;
  std::deque<JobSubmission> queue;
  std::optional<std::string> active_job;
  std::optional<Timestamp> idle_deadline;

  bool operator==(const RunnerResearcher&) const = default;
};

struct WorkloadRunnerState {
  bool attached = false;
  std::string template_name;
  std::vector<JobSubmission> submissions;
  std::size_t cursor = 0;
  std::map<std::string, RunnerResearcher> researchers;

  bool operator==(const WorkloadRunnerState&) const = default;
};

struct ResearcherRecord {
  std::optional<Timestamp> first_workspace_at;
  std::optional<Timestamp> first_success_at;
  bool assisted = false;

  bool operator==(const ResearcherRecord&) const = default;
};

/// Everything the control plane knows. Only apply_event() mutates it.
struct ClusterState {
  ControlConfig config;
  Timestamp now = 0;
  ClockMode clock_mode = ClockMode::kVirtual;
  std::uint64_t last_sequence = 0;

  InMemoryCluster cluster;
  ImageRegistry images;
  TemplateCatalog templates;

  std::map<std::string, Workspace> workspaces;
  std::uint64_t workspace_counter = 0;
  std::deque<std::string> pending;  // FIFO retry queue
  std::map<std::string, std::string> unschedulable_reason;

  AllocationMode mode = AllocationMode::kShared;
  std::map<std::string, std::string> pins;  // researcher -> node (DedicatedVM)

  std::vector<FaultState> faults;
  std::map<std::string, HealthReport> latest_health;

  std::map<std::string, ActiveJob> jobs;
  // Jobs that ended after the last utilisation sample.
  std::vector<ActiveJob> recent_jobs;
  std::uint64_t job_counter = 0;
  Timestamp last_sample_at = 0;

  std::map<std::string, PipelineInFlight> pipelines;
  std::uint64_t pipeline_counter = 0;

  WorkloadRunnerState runner;
  std::map<std::string, ResearcherRecord> researchers;

  const Workspace& workspace(const std::string& id) const;
};

/// Folds one event into the state. Throws Error(kDataLoss) if the event does
/// not apply cleanly (corrupt or reordered log).
void apply_event(ClusterState& state, const Event& event);

/// Folds a whole log from the empty state.
ClusterState fold_events(std::span<const Event> events);

nlohmann::json state_to_json(const ClusterState& state);
/// FNV-1a/64 of the canonical JSON form, as 16 hex digits.
std::string state_digest(const ClusterState& state);

/// Structural invariants; empty when the state is valid.
std::vector<std::string> check_invariants(const ClusterState& state);

void to_json(nlohmann::json& j, const ControlConfig& c);
void from_json(const nlohmann::json& j, ControlConfig& c);
void to_json(nlohmann::json& j, const ActiveJob& a);
void from_json(const nlohmann::json& j, ActiveJob& a);

namespace event_kind {
inline constexpr const char* kConfigured = "control.configured";
inline constexpr const char* kNodeRegistered = "node.registered";
inline constexpr const char* kNodeDeregistered = "node.deregistered";
inline constexpr const char* kDriverUpdated = "node.driver_updated";
inline constexpr const char* kImageRegistered = "image.registered";
inline constexpr const char* kTemplateSaved = "template.saved";
inline constexpr const char* kWorkspaceCreated = "workspace.created";
inline constexpr const char* kWorkspaceScheduled = "workspace.scheduled";
inline constexpr const char* kWorkspaceUnschedulable = "workspace.unschedulable";
inline constexpr const char* kImagePulled = "workspace.image_pulled";
inline constexpr const char* kWorkspaceRunning = "workspace.running";
inline constexpr const char* kWorkspaceFailed = "workspace.failed";
inline constexpr const char* kWorkspaceStopped = "workspace.stopped";
inline constexpr const char* kWorkspaceRequeued = "workspace.requeued";
inline constexpr const char* kWorkspaceDeleted = "workspace.deleted";
inline constexpr const char* kReleaseNoop = "scheduler.release_noop";
inline constexpr const char* kModeSet = "scheduler.mode_set";
inline constexpr const char* kHealthReported = "health.reported";
inline constexpr const char* kFaultInjected = "fault.injected";
inline constexpr const char* kFaultsCleared = "fault.cleared";
inline constexpr const char* kJobSubmitted = "job.submitted";
inline constexpr const char* kJobStarted = "job.started";
inline constexpr const char* kJobCompleted = "job.completed";
inline constexpr const char* kAssistedSet = "researcher.assisted";
inline constexpr const char* kPipelineStarted = "pipeline.started";
inline constexpr const char* kPipelineCompleted = "pipeline.completed";
inline constexpr const char* kSampleTick = "sample.tick";
inline constexpr const char* kClockAdvanced = "clock.advanced";
inline constexpr const char* kClockModeSet = "clock.mode_set";
inline constexpr const char* kWorkloadAttached = "workload.attached";
inline constexpr const char* kIdleExpired = "workload.idle_expired";
}  // namespace event_kind

}  // namespace labplane
