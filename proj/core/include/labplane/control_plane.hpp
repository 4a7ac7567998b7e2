#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labplane/event_log.hpp"
#include "labplane/scheduler.hpp"
#include "labplane/state.hpp"

namespace labplane {

/// Who is issuing a command. Admins may act on anyone's workspace.
struct Actor {
  std::string id;
  bool admin = false;

  static Actor administrator() { return {"admin", true}; }
};

/// The single command stream of the cluster.
///
/// Every public mutator validates its inputs against the current state,
/// decides, and then emits one or more events; the state only ever changes by
/// folding those events (see apply_event). Replaying the log therefore
/// reproduces the state exactly, and any prefix of the log is a valid state.
///
/// Not thread-safe: callers serialize access (the HTTP service wraps it in a lock).
class ControlPlane {
 public:
  explicit ControlPlane(ControlConfig config = {},
                        std::unique_ptr<SchedulingPolicy> policy = make_default_policy());

  /// Rebuilds a control plane from a log. Throws Error(kDataLoss) when the log does not fold.
  static ControlPlane replay(std::span<const Event> events,
                             std::unique_ptr<SchedulingPolicy> policy = make_default_policy());

  ControlPlane(ControlPlane&&) noexcept = default;
  ControlPlane& operator=(ControlPlane&&) noexcept = default;

  // -- nodes ---------------------------------------------------------------
  void register_node(Node node);
  /// Workspaces on the node move to Failed before it leaves the pool.
  void deregister_node(const std::string& node_id);

  // -- images --------------------------------------------------------------
  void register_image(ImageSpec spec);
  CompatReport check_compatibility(const std::string& image_tag, const std::string& node_id) const;
  /// Re-checks every image against the node. Running workspaces whose image
  /// became unsupported are flagged, not stopped.
  RevalidationReport update_host_driver(const std::string& node_id, std::string driver_version,
                                        CudaVersion max_cuda);

  // -- templates -----------------------------------------------------------
  /// Creates or edits a template; returns the stored version.
  Template save_template(Template tmpl);

  // -- workspace lifecycle -------------------------------------------------
  /// Creates a Pending workspace owned by `owner` and tries to schedule it right away.
  const Workspace& create_workspace(const Actor& actor, const std::string& owner,
                                    const std::string& template_name);
  const Workspace& create_workspace(const Actor& actor, const std::string& template_name) {
    return create_workspace(actor, actor.id, template_name);
  }
  WorkspaceState stop(const Actor& actor, const std::string& workspace_id);
  WorkspaceState restart(const Actor& actor, const std::string& workspace_id);
  /// Re-enters Pending on the newest version of the workspace's template.
  WorkspaceState rebuild(const Actor& actor, const std::string& workspace_id);
  WorkspaceState remove(const Actor& actor, const std::string& workspace_id);

  // -- scheduling ----------------------------------------------------------
  /// Attempts to place one Pending workspace.
  ScheduleDecision schedule(const std::string& workspace_id);
  /// Ends the workspace's placement and returns its resources; a second call is a logged no-op.
  void release(const std::string& workspace_id);
  void set_allocation_mode(AllocationMode mode);

  // -- health --------------------------------------------------------------
  void inject_fault(const FaultSpec& spec);
  void clear_faults();
  HealthReport run_health_check(const std::string& workspace_id);
  const HealthReport* latest_health(const std::string& workspace_id) const;

  // -- simulation ----------------------------------------------------------
  /// Fires every timer due in (now, now + delta] in timestamp order.
  Timestamp advance_clock(Seconds delta);
  /// Processes timers up to `t` irrespective of clock mode (real-time ticker).
  Timestamp sync_to(Timestamp t);
  void set_clock_mode(ClockMode mode);
  /// Starts a job on a Running workspace; returns the job id.
  std::string run_job(const std::string& workspace_id, Seconds duration, double util_percent,
                      int exit_code);
  /// Generates a workload and drives it: jobs are queued per researcher and
  /// workspaces are created, restarted or (Shared mode) stopped when idle.
  void attach_workload(const WorkloadProfile& profile, const std::vector<std::string>& researchers,
                       const std::string& template_name, Seconds horizon);
  /// Plans a pipeline run for a configured project; it completes on the clock.
  PipelineRun trigger_pipeline(const std::string& project_name);
  PipelineRun trigger_pipeline(const PipelineConfig& config);
  void set_assisted(const std::string& researcher, bool assisted);

  // -- reads ---------------------------------------------------------------
  const ClusterState& state() const noexcept { return state_; }
  const EventLog& log() const noexcept { return log_; }
  std::span<const Event> events() const noexcept { return log_.events(); }
  Timestamp now() const noexcept { return state_.now; }
  std::string digest() const { return state_digest(state_); }
  const SchedulingPolicy& policy() const noexcept { return *policy_; }

  void set_event_sink(EventLog::Sink sink) { log_.set_sink(std::move(sink)); }

 private:
  struct ReplayTag {};
  ControlPlane(ReplayTag, std::unique_ptr<SchedulingPolicy> policy);

  const Event& emit(const char* kind, nlohmann::json payload);
  const Event& emit_at(Timestamp at, const char* kind, nlohmann::json payload);

  Workspace& owned_workspace(const Actor& actor, const std::string& workspace_id);
  const Workspace& create_internal(const std::string& owner, const std::string& template_name,
                                   bool from_workload);
  void requeue(const Workspace& ws, bool rebuild);
  void stop_internal(const std::string& workspace_id);
  void fail_internal(const std::string& workspace_id, const std::string& reason, bool drain);
  void kill_jobs_on(const std::string& workspace_id);
  void drain_queue();

  void process_until(Timestamp target);
  void on_phase_due(const std::string& workspace_id);
  void on_running(const std::string& workspace_id);
  void on_job_end(const std::string& job_id);
  void on_submission();
  void on_idle_deadline(const std::string& researcher);
  void on_sample_tick(Timestamp at);
  void dispatch(const std::string& researcher);

  ClusterState state_;
  EventLog log_;
  // Stamp for events emitted while a timer fires.
  std::optional<Timestamp> timer_time_;
  std::unique_ptr<SchedulingPolicy> policy_;
};

}  // namespace labplane
