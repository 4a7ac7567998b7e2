#include "labplane/state.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {
namespace {

namespace ek = event_kind;
using nlohmann::json;
using Handler = void (*)(ClusterState&, const Event&);

Workspace& ws_at(ClusterState& s, const json& payload) {
  const auto id = payload.at("workspace_id").get<std::string>();
  auto it = s.workspaces.find(id);
  if (it == s.workspaces.end()) {
    throw Error(ErrorCode::kDataLoss, fmt::format("event refers to unknown workspace '{}'", id));
  }
  return it->second;
}

void drop_from_queue(ClusterState& s, const std::string& id) {
  std::erase(s.pending, id);
  s.unschedulable_reason.erase(id);
}

void release_reservation(ClusterState& s, Workspace& ws) {
  if (ws.node_id && holds_node(ws.state)) s.cluster.release(*ws.node_id, ws.resources);
}

RunnerResearcher* runner_for_workspace(ClusterState& s, const std::string& ws_id) {
  for (auto& [r, rr] : s.runner.researchers) {
    if (rr.workspace_id == ws_id) return &rr;
  }
  return nullptr;
}

void on_configured(ClusterState& s, const Event& e) {
  if (s.last_sequence != 0 && e.sequence != 1) {
    throw Error(ErrorCode::kDataLoss, "configuration must be the first event");
  }
  s.config = e.payload.at("config").get<ControlConfig>();
  s.now = s.config.start_time;
  s.last_sample_at = std::floor(s.config.start_time / kMinute) * kMinute;
  s.cluster.set_cache_capacity(s.config.image_cache_capacity);
}

void on_node_registered(ClusterState& s, const Event& e) {
  s.cluster.register_node(e.payload.at("node").get<Node>());
}

void on_node_deregistered(ClusterState& s, const Event& e) {
  const auto id = e.payload.at("node_id").get<std::string>();
  for (const auto& [wid, ws] : s.workspaces) {
    if (ws.node_id == id) {
      throw Error(ErrorCode::kDataLoss, fmt::format("node '{}' removed while '{}' holds it", id, wid));
    }
  }
  s.cluster.deregister_node(id);
  std::erase_if(s.pins, [&](const auto& kv) { return kv.second == id; });
}

void on_driver_updated(ClusterState& s, const Event& e) {
  s.cluster.set_driver(e.payload.at("node_id").get<std::string>(),
                       e.payload.at("driver_version").get<std::string>(),
                       e.payload.at("max_cuda").get<CudaVersion>());
  for (const auto& id : e.payload.at("flagged")) {
    ws_at(s, json{{"workspace_id", id}}).compat_flagged = true;
  }
}

void on_image_registered(ClusterState& s, const Event& e) {
  s.images.register_image(e.payload.at("image").get<ImageSpec>());
}

void on_template_saved(ClusterState& s, const Event& e) {
  s.templates.store(e.payload.at("template").get<Template>());
}

void on_workspace_created(ClusterState& s, const Event& e) {
  const auto& p = e.payload;
  Workspace ws;
  ws.workspace_id = p.at("workspace_id").get<std::string>();
  ws.owner = p.at("owner").get<std::string>();
  ws.template_name = p.at("template_name").get<std::string>();
  ws.template_version = p.at("template_version").get<int>();
  ws.image_tag = p.at("image_tag").get<std::string>();
  ws.resources = p.at("resources").get<ResourceSpec>();
  ws.mounts = p.at("mounts").get<std::vector<std::string>>();
  ws.node_selector = p.at("node_selector").get<std::map<std::string, std::string>>();
  ws.state = WorkspaceState::kPending;
  ws.transition_log.push_back({WorkspaceState::kPending, e.timestamp});
  if (s.workspaces.contains(ws.workspace_id)) {
    throw Error(ErrorCode::kDataLoss, fmt::format("workspace '{}' created twice", ws.workspace_id));
  }
  s.pending.push_back(ws.workspace_id);
  ++s.workspace_counter;
  auto& rec = s.researchers[ws.owner];
  if (!rec.first_workspace_at) rec.first_workspace_at = e.timestamp;
  if (p.value("from_workload", false)) {
    s.runner.researchers[ws.owner].workspace_id = ws.workspace_id;
  }
  auto id = ws.workspace_id;
  s.workspaces.emplace(std::move(id), std::move(ws));
}

void on_workspace_scheduled(ClusterState& s, const Event& e) {
  const auto& p = e.payload;
  Workspace& ws = ws_at(s, p);
  const auto node = p.at("node_id").get<std::string>();
  const bool warm = p.at("cache_hit").get<bool>();
  if (warm != s.cluster.at(node).has_cached(ws.image_tag)) {
    throw Error(ErrorCode::kDataLoss, "scheduling event disagrees with the node's image cache");
  }
  advance(ws, warm ? LifecycleEvent::kScheduledWarm : LifecycleEvent::kScheduledCold, e.timestamp, node);
  s.cluster.reserve(node, ws.resources);
  if (warm) s.cluster.touch_image(node, ws.image_tag);
  ws.phase_due = e.timestamp + (warm ? s.config.init_seconds : s.config.image_pull_seconds);
  drop_from_queue(s, ws.workspace_id);
  if (s.mode == AllocationMode::kDedicatedVM) s.pins[ws.owner] = node;
}

void on_workspace_unschedulable(ClusterState& s, const Event& e) {
  const Workspace& ws = ws_at(s, e.payload);
  s.unschedulable_reason[ws.workspace_id] = e.payload.at("reason").get<std::string>();
}

void on_image_pulled(ClusterState& s, const Event& e) {
  Workspace& ws = ws_at(s, e.payload);
  const auto node = *ws.node_id;
  advance(ws, LifecycleEvent::kImagePulled, e.timestamp);
  s.cluster.cache_image(node, ws.image_tag);
  ws.phase_due = e.timestamp + s.config.init_seconds;
}

void on_workspace_running(ClusterState& s, const Event& e) {
  Workspace& ws = ws_at(s, e.payload);
  advance(ws, LifecycleEvent::kInitialized, e.timestamp);
  ws.phase_due.reset();
}

void on_workspace_failed(ClusterState& s, const Event& e) {
  Workspace& ws = ws_at(s, e.payload);
  release_reservation(s, ws);
  advance(ws, LifecycleEvent::kFail, e.timestamp);
  ws.failure_reason = e.payload.at("reason").get<std::string>();
  drop_from_queue(s, ws.workspace_id);
}

void on_workspace_stopped(ClusterState& s, const Event& e) {
  Workspace& ws = ws_at(s, e.payload);
  release_reservation(s, ws);
  advance(ws, LifecycleEvent::kStop, e.timestamp);
  if (auto* rr = runner_for_workspace(s, ws.workspace_id)) rr->idle_deadline.reset();
}

void on_workspace_requeued(ClusterState& s, const Event& e) {
  const auto& p = e.payload;
  Workspace& ws = ws_at(s, p);
  const bool rebuild = p.at("via").get<std::string>() == "rebuild";
  advance(ws, rebuild ? LifecycleEvent::kRebuild : LifecycleEvent::kRestart, e.timestamp);
  if (rebuild) {
    ws.template_version = p.at("template_version").get<int>();
    ws.image_tag = p.at("image_tag").get<std::string>();
    ws.resources = p.at("resources").get<ResourceSpec>();
    ws.mounts = p.at("mounts").get<std::vector<std::string>>();
    ws.node_selector = p.at("node_selector").get<std::map<std::string, std::string>>();
  }
  s.pending.push_back(ws.workspace_id);
}

void on_workspace_deleted(ClusterState& s, const Event& e) {
  Workspace& ws = ws_at(s, e.payload);
  advance(ws, LifecycleEvent::kDelete, e.timestamp);
  s.latest_health.erase(ws.workspace_id);
}

void on_release_noop(ClusterState&, const Event&) {}

void on_mode_set(ClusterState& s, const Event& e) {
  s.mode = e.payload.at("mode").get<AllocationMode>();
  s.pins.clear();
}

void on_health_reported(ClusterState& s, const Event& e) {
  auto report = e.payload.at("report").get<HealthReport>();
  for (const auto& d : e.payload.at("draws")) {
    const auto idx = d.at(0).get<std::size_t>();
    if (idx >= s.faults.size()) throw Error(ErrorCode::kDataLoss, "health draw for unknown fault");
    s.faults[idx].draws = d.at(1).get<std::uint64_t>();
  }
  auto id = report.workspace_id;
  s.latest_health.insert_or_assign(std::move(id), std::move(report));
}

void on_fault_injected(ClusterState& s, const Event& e) {
  s.faults.push_back(FaultState{e.payload.at("fault").get<FaultSpec>(), 0});
}

void on_faults_cleared(ClusterState& s, const Event&) { s.faults.clear(); }

void on_job_submitted(ClusterState& s, const Event& e) {
  auto job = e.payload.at("job").get<JobSubmission>();
  if (s.runner.cursor >= s.runner.submissions.size() || !(s.runner.submissions[s.runner.cursor] == job)) {
    throw Error(ErrorCode::kDataLoss, "job submission out of workload order");
  }
  ++s.runner.cursor;
  s.runner.researchers[job.researcher].queue.push_back(std::move(job));
}

void on_job_started(ClusterState& s, const Event& e) {
  auto job = e.payload.at("job").get<ActiveJob>();
  const Workspace& ws = s.workspace(job.workspace_id);
  if (ws.state != WorkspaceState::kRunning || ws.node_id != job.node_id) {
    throw Error(ErrorCode::kDataLoss, fmt::format("job '{}' started on a workspace that is not running", job.job_id));
  }
  if (job.from_workload) {
    auto& rr = s.runner.researchers.at(job.owner);
    if (rr.queue.empty() || rr.queue.front().job_id != job.job_id) {
      throw Error(ErrorCode::kDataLoss, "workload job started out of queue order");
    }
    rr.queue.pop_front();
    rr.active_job = job.job_id;
    rr.idle_deadline.reset();
  } else {
    ++s.job_counter;
  }
  auto id = job.job_id;
  s.jobs.emplace(std::move(id), std::move(job));
}

void on_job_completed(ClusterState& s, const Event& e) {
  const auto id = e.payload.at("job_id").get<std::string>();
  auto it = s.jobs.find(id);
  if (it == s.jobs.end()) throw Error(ErrorCode::kDataLoss, fmt::format("unknown job '{}'", id));
  ActiveJob job = std::move(it->second);
  s.jobs.erase(it);
  job.end = e.timestamp;
  job.exit_code = e.payload.at("exit_code").get<int>();
  if (job.exit_code == 0) {
    auto& rec = s.researchers[job.owner];
    if (!rec.first_success_at) rec.first_success_at = e.timestamp;
  }
  if (job.from_workload) {
    auto& rr = s.runner.researchers.at(job.owner);
    rr.active_job.reset();
    if (rr.queue.empty() && s.mode == AllocationMode::kShared) {
      rr.idle_deadline = e.timestamp + s.config.idle_stop_seconds;
    }
  }
  s.recent_jobs.push_back(std::move(job));
}

void on_assisted_set(ClusterState& s, const Event& e) {
  s.researchers[e.payload.at("researcher").get<std::string>()].assisted = e.payload.at("assisted").get<bool>();
}

void on_pipeline_started(ClusterState& s, const Event& e) {
  PipelineInFlight p;
  p.pipeline_id = e.payload.at("pipeline_id").get<std::string>();
  p.run = e.payload.at("run").get<PipelineRun>();
  p.started_at = e.timestamp;
  p.due = e.timestamp + p.run.total;
  ++s.pipeline_counter;
  auto id = p.pipeline_id;
  s.pipelines.emplace(std::move(id), std::move(p));
}

void on_pipeline_completed(ClusterState& s, const Event& e) {
  if (s.pipelines.erase(e.payload.at("pipeline_id").get<std::string>()) == 0) {
    throw Error(ErrorCode::kDataLoss, "completion of an unknown pipeline run");
  }
}

void on_sample_tick(ClusterState& s, const Event& e) {
  const auto at = e.payload.at("at").get<double>();
  if (at <= s.last_sample_at) throw Error(ErrorCode::kDataLoss, "utilisation samples out of order");
  s.last_sample_at = at;
  std::erase_if(s.recent_jobs, [&](const ActiveJob& j) { return j.end <= at; });
}

void on_clock_advanced(ClusterState&, const Event&) {}

void on_clock_mode_set(ClusterState& s, const Event& e) {
  s.clock_mode = e.payload.at("mode").get<ClockMode>();
}

void on_workload_attached(ClusterState& s, const Event& e) {
  if (s.runner.attached) throw Error(ErrorCode::kDataLoss, "workload attached twice");
  s.runner.attached = true;
  s.runner.template_name = e.payload.at("template").get<std::string>();
  s.runner.submissions = e.payload.at("submissions").get<std::vector<JobSubmission>>();
  s.runner.cursor = 0;
  for (const auto& r : e.payload.at("researchers")) s.runner.researchers[r.get<std::string>()];
}

void on_idle_expired(ClusterState& s, const Event& e) {
  s.runner.researchers.at(e.payload.at("researcher").get<std::string>()).idle_deadline.reset();
}

const std::unordered_map<std::string, Handler>& handlers() {
  static const std::unordered_map<std::string, Handler> table{
      {ek::kConfigured, on_configured},
      {ek::kNodeRegistered, on_node_registered},
      {ek::kNodeDeregistered, on_node_deregistered},
      {ek::kDriverUpdated, on_driver_updated},
      {ek::kImageRegistered, on_image_registered},
      {ek::kTemplateSaved, on_template_saved},
      {ek::kWorkspaceCreated, on_workspace_created},
      {ek::kWorkspaceScheduled, on_workspace_scheduled},
      {ek::kWorkspaceUnschedulable, on_workspace_unschedulable},
      {ek::kImagePulled, on_image_pulled},
      {ek::kWorkspaceRunning, on_workspace_running},
      {ek::kWorkspaceFailed, on_workspace_failed},
      {ek::kWorkspaceStopped, on_workspace_stopped},
      {ek::kWorkspaceRequeued, on_workspace_requeued},
      {ek::kWorkspaceDeleted, on_workspace_deleted},
      {ek::kReleaseNoop, on_release_noop},
      {ek::kModeSet, on_mode_set},
      {ek::kHealthReported, on_health_reported},
      {ek::kFaultInjected, on_fault_injected},
      {ek::kFaultsCleared, on_faults_cleared},
      {ek::kJobSubmitted, on_job_submitted},
      {ek::kJobStarted, on_job_started},
      {ek::kJobCompleted, on_job_completed},
      {ek::kAssistedSet, on_assisted_set},
      {ek::kPipelineStarted, on_pipeline_started},
      {ek::kPipelineCompleted, on_pipeline_completed},
      {ek::kSampleTick, on_sample_tick},
      {ek::kClockAdvanced, on_clock_advanced},
      {ek::kClockModeSet, on_clock_mode_set},
      {ek::kWorkloadAttached, on_workload_attached},
      {ek::kIdleExpired, on_idle_expired},
  };
  return table;
}

}  // namespace

const Workspace& ClusterState::workspace(const std::string& id) const {
  auto it = workspaces.find(id);
  if (it == workspaces.end()) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown workspace '{}'", id), "workspace_id");
  }
  return it->second;
}

void apply_event(ClusterState& state, const Event& event) {
  if (event.sequence != state.last_sequence + 1) {
    throw Error(ErrorCode::kDataLoss,
                fmt::format("event {} applied after {}", event.sequence, state.last_sequence));
  }
  if (event.timestamp < state.now) {
    throw Error(ErrorCode::kDataLoss, fmt::format("event {} goes back in time", event.sequence));
  }
  const auto& table = handlers();
  auto it = table.find(event.kind);
  if (it == table.end()) {
    throw Error(ErrorCode::kDataLoss, fmt::format("unknown event kind '{}'", event.kind));
  }
  // A failed apply leaves the state half-updated; callers discard it (replay aborts).
  state.now = event.timestamp;
  try {
    it->second(state, event);
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kDataLoss) throw;
    throw Error(ErrorCode::kDataLoss,
                fmt::format("event {} ({}) does not apply: {}", event.sequence, event.kind, err.what()));
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::kDataLoss,
                fmt::format("event {} ({}) has a malformed payload: {}", event.sequence, event.kind, err.what()));
  }
  state.last_sequence = event.sequence;
}

ClusterState fold_events(std::span<const Event> events) {
  ClusterState state;
  for (const auto& e : events) apply_event(state, e);
  return state;
}

std::string state_digest(const ClusterState& state) {
  const std::string text = state_to_json(state).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace labplane
