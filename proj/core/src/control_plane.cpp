#include "labplane/control_plane.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {
namespace {

namespace ek = event_kind;
using nlohmann::json;

constexpr int kKilledExitCode = 137;

json workspace_ref(const std::string& id) { return json{{"workspace_id", id}}; }

/// Time-weighted mean of the capped instantaneous load over [from, to].
double sampled_utilisation(const std::vector<const ActiveJob*>& jobs, Timestamp from, Timestamp to) {
  std::vector<Timestamp> cuts{from, to};
  for (const auto* j : jobs) {
    if (j->start > from && j->start < to) cuts.push_back(j->start);
    if (j->end > from && j->end < to) cuts.push_back(j->end);
  }
  std::sort(cuts.begin(), cuts.end());
  double area = 0;
  for (std::size_t i = 1; i < cuts.size(); ++i) {
    const Timestamp a = cuts[i - 1];
    const Timestamp b = cuts[i];
    if (b <= a) continue;
    const Timestamp mid = 0.5 * (a + b);
    double load = 0;
    for (const auto* j : jobs) {
      if (j->start <= mid && mid < j->end) load += j->util_percent;
    }
    area += std::min(load, 100.0) * (b - a);
  }
  return area / (to - from);
}

}  // namespace

ControlPlane::ControlPlane(ControlConfig config, std::unique_ptr<SchedulingPolicy> policy)
    : policy_(std::move(policy)) {
  if (!policy_) policy_ = make_default_policy();
  if (config.start_time < 0) {
    throw Error(ErrorCode::kInvalidArgument, "start_time must be non-negative", "start_time");
  }
  if (config.image_pull_seconds < 0 || config.init_seconds < 0) {
    throw Error(ErrorCode::kInvalidArgument, "pull and init durations must be non-negative",
                "image_pull_seconds");
  }
  for (const auto& [name, p] : config.pipelines) p.validate();
  const auto start = config.start_time;
  emit_at(start, ek::kConfigured, json{{"config", std::move(config)}});
}

ControlPlane::ControlPlane(ReplayTag, std::unique_ptr<SchedulingPolicy> policy)
    : policy_(std::move(policy)) {
  if (!policy_) policy_ = make_default_policy();
}

ControlPlane ControlPlane::replay(std::span<const Event> events, std::unique_ptr<SchedulingPolicy> policy) {
  ControlPlane cp(ReplayTag{}, std::move(policy));
  if (!events.empty() && events.front().kind != ek::kConfigured) {
    throw Error(ErrorCode::kDataLoss, "log does not start with a configuration event");
  }
  for (const auto& e : events) {
    apply_event(cp.state_, e);
    cp.log_.append(e);
  }
  if (events.empty()) {
    cp.emit_at(0, ek::kConfigured, json{{"config", ControlConfig{}}});
  }
  return cp;
}

const Event& ControlPlane::emit(const char* kind, json payload) {
  return emit_at(timer_time_.value_or(state_.now), kind, std::move(payload));
}

const Event& ControlPlane::emit_at(Timestamp at, const char* kind, json payload) {
  Event e{log_.last_sequence() + 1, at, kind, std::move(payload)};
  apply_event(state_, e);
  return log_.append(std::move(e));
}

// ---------------------------------------------------------------------------
// nodes and images

void ControlPlane::register_node(Node node) {
  if (state_.cluster.find(node.node_id) != nullptr) {
    throw Error(ErrorCode::kAlreadyExists, fmt::format("node '{}' is already registered", node.node_id),
                "node_id");
  }
  // Validate on a scratch backend so a bad node never reaches the log.
  InMemoryCluster scratch(state_.cluster.cache_capacity());
  scratch.register_node(node);
  emit(ek::kNodeRegistered, json{{"node", scratch.at(node.node_id)}});
  drain_queue();
}

void ControlPlane::deregister_node(const std::string& node_id) {
  state_.cluster.at(node_id);
  std::vector<std::string> victims;
  for (const auto& [id, ws] : state_.workspaces) {
    if (ws.node_id == node_id) victims.push_back(id);
  }
  for (const auto& id : victims) fail_internal(id, fmt::format("node '{}' was deregistered", node_id), false);
  emit(ek::kNodeDeregistered, json{{"node_id", node_id}});
  drain_queue();
}

void ControlPlane::register_image(ImageSpec spec) {
  ImageRegistry scratch;
  scratch.register_image(spec);
  if (state_.images.contains(spec.tag)) {
    throw Error(ErrorCode::kAlreadyExists,
                fmt::format("image tag '{}' is already published and immutable", spec.tag), "tag");
  }
  emit(ek::kImageRegistered, json{{"image", spec}});
}

CompatReport ControlPlane::check_compatibility(const std::string& image_tag, const std::string& node_id) const {
  return labplane::check_compatibility(state_.images.at(image_tag), state_.cluster.at(node_id));
}

RevalidationReport ControlPlane::update_host_driver(const std::string& node_id, std::string driver_version,
                                                    CudaVersion max_cuda) {
  const Node& before = state_.cluster.at(node_id);
  Node after = before;
  after.driver_version = driver_version;
  after.max_cuda = max_cuda;
  auto report = revalidate(state_.images, before, after);

  std::vector<std::string> flagged;
  for (const auto& [id, ws] : state_.workspaces) {
    if (ws.node_id == node_id && !cuda_compatible(state_.images.at(ws.image_tag).cuda_runtime, max_cuda)) {
      flagged.push_back(id);
    }
  }
  emit(ek::kDriverUpdated, json{{"node_id", node_id},
                                {"driver_version", std::move(driver_version)},
                                {"max_cuda", max_cuda},
                                {"report", report},
                                {"flagged", flagged}});
  drain_queue();
  return report;
}

Template ControlPlane::save_template(Template tmpl) {
  auto prepared = state_.templates.prepare(std::move(tmpl), state_.images, state_.config.limits);
  emit(ek::kTemplateSaved, json{{"template", prepared}});
  return prepared;
}

// ---------------------------------------------------------------------------
// lifecycle

const Workspace& ControlPlane::create_workspace(const Actor& actor, const std::string& owner,
                                                const std::string& template_name) {
  if (owner.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "owner must not be empty", "owner");
  }
  if (owner != actor.id && !actor.admin) {
    throw Error(ErrorCode::kPermissionDenied,
                fmt::format("'{}' may not create workspaces for '{}'", actor.id, owner), "owner");
  }
  return create_internal(owner, template_name, false);
}

const Workspace& ControlPlane::create_internal(const std::string& owner, const std::string& template_name,
                                               bool from_workload) {
  const Template& tmpl = state_.templates.at(template_name);
  const ImageSpec& image = state_.images.at(tmpl.image_tag);
  const auto nodes = state_.cluster.nodes();
  const bool runnable = std::any_of(nodes.begin(), nodes.end(), [&](const Node* n) {
    return cuda_compatible(image.cuda_runtime, n->max_cuda);
  });
  if (!runnable) {
    throw Error(ErrorCode::kFailedPrecondition,
                fmt::format("creation blocked: image '{}' (CUDA {}) is incompatible with every registered node",
                            image.tag, image.cuda_runtime.str()),
                "template");
  }
  const auto id = fmt::format("ws-{}", state_.workspace_counter + 1);
  emit(ek::kWorkspaceCreated, json{{"workspace_id", id},
                                   {"owner", owner},
                                   {"template_name", tmpl.name},
                                   {"template_version", tmpl.version},
                                   {"image_tag", tmpl.image_tag},
                                   {"resources", tmpl.resources},
                                   {"mounts", tmpl.mounts},
                                   {"node_selector", tmpl.node_selector},
                                   {"from_workload", from_workload}});
  drain_queue();
  return state_.workspaces.at(id);
}

Workspace& ControlPlane::owned_workspace(const Actor& actor, const std::string& workspace_id) {
  auto it = state_.workspaces.find(workspace_id);
  if (it == state_.workspaces.end()) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown workspace '{}'", workspace_id), "workspace_id");
  }
  if (it->second.owner != actor.id && !actor.admin) {
    throw Error(ErrorCode::kPermissionDenied,
                fmt::format("'{}' does not own workspace '{}'", actor.id, workspace_id), "workspace_id");
  }
  return it->second;
}

namespace {
// Throws kIllegalTransition without touching the real workspace.
void probe(const Workspace& ws, LifecycleEvent event, Timestamp at) {
  Workspace copy = ws;
  advance(copy, event, at);
}
}  // namespace

WorkspaceState ControlPlane::stop(const Actor& actor, const std::string& workspace_id) {
  const Workspace& ws = owned_workspace(actor, workspace_id);
  probe(ws, LifecycleEvent::kStop, state_.now);
  stop_internal(workspace_id);
  return state_.workspaces.at(workspace_id).state;
}

WorkspaceState ControlPlane::restart(const Actor& actor, const std::string& workspace_id) {
  const Workspace& ws = owned_workspace(actor, workspace_id);
  probe(ws, LifecycleEvent::kRestart, state_.now);
  requeue(ws, false);
  drain_queue();
  return state_.workspaces.at(workspace_id).state;
}

WorkspaceState ControlPlane::rebuild(const Actor& actor, const std::string& workspace_id) {
  const Workspace& ws = owned_workspace(actor, workspace_id);
  probe(ws, LifecycleEvent::kRebuild, state_.now);
  requeue(ws, true);
  drain_queue();
  return state_.workspaces.at(workspace_id).state;
}

WorkspaceState ControlPlane::remove(const Actor& actor, const std::string& workspace_id) {
  const Workspace& ws = owned_workspace(actor, workspace_id);
  probe(ws, LifecycleEvent::kDelete, state_.now);
  emit(ek::kWorkspaceDeleted, workspace_ref(workspace_id));
  return state_.workspaces.at(workspace_id).state;
}

void ControlPlane::requeue(const Workspace& ws, bool rebuild) {
  json payload{{"workspace_id", ws.workspace_id}, {"via", rebuild ? "rebuild" : "restart"}};
  if (rebuild) {
    const Template& tmpl = state_.templates.at(ws.template_name);
    payload["template_version"] = tmpl.version;
    payload["image_tag"] = tmpl.image_tag;
    payload["resources"] = tmpl.resources;
    payload["mounts"] = tmpl.mounts;
    payload["node_selector"] = tmpl.node_selector;
  }
  emit(ek::kWorkspaceRequeued, std::move(payload));
}

void ControlPlane::kill_jobs_on(const std::string& workspace_id) {
  std::vector<const ActiveJob*> victims;
  for (const auto& [id, job] : state_.jobs) {
    if (job.workspace_id == workspace_id) victims.push_back(&job);
  }
  std::vector<std::string> ids;
  for (const auto* j : victims) ids.push_back(j->job_id);
  for (const auto& id : ids) {
    const auto& job = state_.jobs.at(id);
    emit(ek::kJobCompleted, json{{"job_id", id},
                                 {"workspace_id", job.workspace_id},
                                 {"owner", job.owner},
                                 {"exit_code", kKilledExitCode},
                                 {"killed", true}});
  }
}

void ControlPlane::stop_internal(const std::string& workspace_id) {
  kill_jobs_on(workspace_id);
  emit(ek::kWorkspaceStopped, workspace_ref(workspace_id));
  drain_queue();
}

void ControlPlane::fail_internal(const std::string& workspace_id, const std::string& reason, bool drain) {
  kill_jobs_on(workspace_id);
  const bool held = state_.workspaces.at(workspace_id).node_id.has_value();
  emit(ek::kWorkspaceFailed, json{{"workspace_id", workspace_id}, {"reason", reason}});
  if (held && drain) drain_queue();
}

// ---------------------------------------------------------------------------
// scheduling

ScheduleDecision ControlPlane::schedule(const std::string& workspace_id) {
  const Workspace& ws = state_.workspace(workspace_id);
  if (ws.state != WorkspaceState::kPending) {
    throw Error(ErrorCode::kFailedPrecondition,
                fmt::format("workspace '{}' is {}, not Pending", workspace_id, to_string(ws.state)),
                "workspace_id");
  }
  ScheduleRequest request{ws.workspace_id, ws.owner, ws.resources, state_.images.at(ws.image_tag),
                          ws.node_selector};
  PlacementContext ctx{state_.cluster, state_.mode, state_.pins};
  ScheduleDecision decision = policy_->decide(request, ctx);
  if (decision.assigned()) {
    emit(ek::kWorkspaceScheduled, json{{"workspace_id", workspace_id},
                                       {"node_id", *decision.node_id},
                                       {"cache_hit", decision.cache_hit},
                                       {"candidates", decision.candidates_considered},
                                       {"policy", policy_->name()}});
  } else {
    auto last = state_.unschedulable_reason.find(workspace_id);
    if (last == state_.unschedulable_reason.end() || last->second != decision.reason) {
      emit(ek::kWorkspaceUnschedulable,
           json{{"workspace_id", workspace_id},
                {"reason", decision.reason},
                {"filter", decision.blocking_filter ? std::string(to_string(*decision.blocking_filter)) : ""},
                {"candidates", decision.candidates_considered}});
    }
  }
  return decision;
}

void ControlPlane::drain_queue() {
  const std::vector<std::string> queue(state_.pending.begin(), state_.pending.end());
  for (const auto& id : queue) {
    if (state_.workspaces.at(id).state == WorkspaceState::kPending) schedule(id);
  }
}

void ControlPlane::release(const std::string& workspace_id) {
  const Workspace& ws = state_.workspace(workspace_id);
  if (ws.node_id) {
    fail_internal(workspace_id, "resources released", true);
  } else {
    emit(ek::kReleaseNoop, json{{"workspace_id", workspace_id},
                                {"warning", "workspace holds no reservation"}});
  }
}

void ControlPlane::set_allocation_mode(AllocationMode mode) {
  for (const auto& [id, ws] : state_.workspaces) {
    if (holds_node(ws.state)) {
      throw Error(ErrorCode::kFailedPrecondition,
                  fmt::format("cannot change allocation mode while workspace '{}' is {}", id,
                              to_string(ws.state)),
                  "mode");
    }
  }
  emit(ek::kModeSet, json{{"mode", mode}});
  drain_queue();
}

// ---------------------------------------------------------------------------
// health

void ControlPlane::inject_fault(const FaultSpec& spec) {
  validate_fault(spec);
  if (state_.cluster.find(spec.target) == nullptr && !state_.images.contains(spec.target)) {
    throw Error(ErrorCode::kNotFound, fmt::format("fault target '{}' is neither a node nor an image", spec.target),
                "target");
  }
  emit(ek::kFaultInjected, json{{"fault", spec}});
}

void ControlPlane::clear_faults() { emit(ek::kFaultsCleared, json::object()); }

HealthReport ControlPlane::run_health_check(const std::string& workspace_id) {
  const Workspace& ws = state_.workspace(workspace_id);
  if (ws.state != WorkspaceState::kRunning) {
    throw Error(ErrorCode::kFailedPrecondition,
                fmt::format("health check needs a Running workspace; '{}' is {}", workspace_id,
                            to_string(ws.state)),
                "workspace_id");
  }
  auto outcome = evaluate_health(ws, state_.cluster.at(*ws.node_id), state_.images.at(ws.image_tag),
                                 state_.faults, timer_time_.value_or(state_.now));
  json draws = json::array();
  for (const auto& [idx, count] : outcome.draws) draws.push_back(json::array({idx, count}));
  emit(ek::kHealthReported, json{{"report", outcome.report}, {"draws", draws}});
  return outcome.report;
}

const HealthReport* ControlPlane::latest_health(const std::string& workspace_id) const {
  state_.workspace(workspace_id);
  auto it = state_.latest_health.find(workspace_id);
  return it == state_.latest_health.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// simulation

Timestamp ControlPlane::advance_clock(Seconds delta) {
  if (state_.clock_mode == ClockMode::kRealTime) {
    throw Error(ErrorCode::kFailedPrecondition, "clock is in RealTime mode; explicit advances are rejected",
                "mode");
  }
  if (!(delta > 0) || !std::isfinite(delta)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("clock advance must be positive, got {}", delta),
                "seconds");
  }
  process_until(state_.now + delta);
  return state_.now;
}

Timestamp ControlPlane::sync_to(Timestamp t) {
  if (t > state_.now) process_until(t);
  return state_.now;
}

void ControlPlane::set_clock_mode(ClockMode mode) { emit(ek::kClockModeSet, json{{"mode", mode}}); }

namespace {

enum class TimerKind { kPhase, kJobEnd, kPipeline, kSubmission, kIdle, kSample };

struct Timer {
  Timestamp at;
  TimerKind kind;
  std::string key;

  bool operator<(const Timer& o) const {
    return std::tie(at, kind, key) < std::tie(o.at, o.kind, o.key);
  }
};

std::optional<Timer> next_timer(const ClusterState& s) {
  std::optional<Timer> best;
  auto offer = [&](Timestamp at, TimerKind kind, const std::string& key) {
    Timer t{at, kind, key};
    if (!best || t < *best) best = std::move(t);
  };
  for (const auto& [id, ws] : s.workspaces) {
    if (ws.phase_due) offer(*ws.phase_due, TimerKind::kPhase, id);
  }
  for (const auto& [id, job] : s.jobs) offer(job.end, TimerKind::kJobEnd, id);
  for (const auto& [id, p] : s.pipelines) offer(p.due, TimerKind::kPipeline, id);
  if (s.runner.attached && s.runner.cursor < s.runner.submissions.size()) {
    offer(s.runner.submissions[s.runner.cursor].submit_at, TimerKind::kSubmission, {});
  }
  for (const auto& [r, rr] : s.runner.researchers) {
    if (rr.idle_deadline) offer(*rr.idle_deadline, TimerKind::kIdle, r);
  }
  offer(s.last_sample_at + kMinute, TimerKind::kSample, {});
  return best;
}

}  // namespace

void ControlPlane::process_until(Timestamp target) {
  while (true) {
    auto timer = next_timer(state_);
    if (!timer || timer->at > target) break;
    timer_time_ = std::max(timer->at, state_.now);
    try {
      switch (timer->kind) {
        case TimerKind::kPhase: on_phase_due(timer->key); break;
        case TimerKind::kJobEnd: on_job_end(timer->key); break;
        case TimerKind::kPipeline: {
          const auto& p = state_.pipelines.at(timer->key);
          emit(ek::kPipelineCompleted, json{{"pipeline_id", p.pipeline_id},
                                            {"run", p.run},
                                            {"started_at", p.started_at}});
          break;
        }
        case TimerKind::kSubmission: on_submission(); break;
        case TimerKind::kIdle: on_idle_deadline(timer->key); break;
        case TimerKind::kSample: on_sample_tick(timer->at); break;
      }
    } catch (...) {
      timer_time_.reset();
      throw;
    }
    timer_time_.reset();
  }
  // Only when nothing landed on the target, so splitting an advance at a
  // timer boundary leaves the log unchanged.
  if (state_.now < target) emit_at(target, ek::kClockAdvanced, json{{"to", target}});
}

void ControlPlane::on_phase_due(const std::string& workspace_id) {
  const Workspace& ws = state_.workspaces.at(workspace_id);
  if (ws.state == WorkspaceState::kPulling) {
    emit(ek::kImagePulled, json{{"workspace_id", workspace_id},
                                {"node_id", *ws.node_id},
                                {"image_tag", ws.image_tag}});
  } else {
    emit(ek::kWorkspaceRunning, json{{"workspace_id", workspace_id},
                                     {"node_id", *ws.node_id},
                                     {"start_condition", *ws.start_condition}});
    on_running(workspace_id);
  }
}

void ControlPlane::on_running(const std::string& workspace_id) {
  const auto report = run_health_check(workspace_id);
  if (!report.reproducible && state_.config.fail_on_unhealthy) {
    fail_internal(workspace_id, "start-time health check failed", true);
  }
  const auto& ws = state_.workspaces.at(workspace_id);
  auto rr = state_.runner.researchers.find(ws.owner);
  if (rr != state_.runner.researchers.end() && rr->second.workspace_id == workspace_id) {
    dispatch(ws.owner);
  }
}

void ControlPlane::on_job_end(const std::string& job_id) {
  const ActiveJob job = state_.jobs.at(job_id);
  emit(ek::kJobCompleted, json{{"job_id", job_id},
                               {"workspace_id", job.workspace_id},
                               {"owner", job.owner},
                               {"exit_code", job.exit_code},
                               {"killed", false}});
  if (job.from_workload) dispatch(job.owner);
}

void ControlPlane::on_submission() {
  const JobSubmission job = state_.runner.submissions[state_.runner.cursor];
  emit(ek::kJobSubmitted, json{{"job", job}});
  dispatch(job.researcher);
}

void ControlPlane::on_idle_deadline(const std::string& researcher) {
  const auto& rr = state_.runner.researchers.at(researcher);
  const Workspace* ws = rr.workspace_id ? &state_.workspaces.at(*rr.workspace_id) : nullptr;
  if (ws && ws->state == WorkspaceState::kRunning && rr.queue.empty() && !rr.active_job) {
    stop_internal(ws->workspace_id);
  } else {
    emit(ek::kIdleExpired, json{{"researcher", researcher}});
  }
}

void ControlPlane::on_sample_tick(Timestamp at) {
  json samples = json::array();
  for (const auto& [id, node] : state_.cluster.node_map()) {
    if (node.gpu_count == 0) continue;
    std::vector<const ActiveJob*> jobs;
    for (const auto& [jid, job] : state_.jobs) {
      if (job.node_id == id) jobs.push_back(&job);
    }
    for (const auto& job : state_.recent_jobs) {
      if (job.node_id == id) jobs.push_back(&job);
    }
    samples.push_back(json{{"node_id", id}, {"util", sampled_utilisation(jobs, at - kMinute, at)}});
  }
  emit(ek::kSampleTick, json{{"at", at}, {"samples", samples}});
}

void ControlPlane::dispatch(const std::string& researcher) {
  const auto& rr = state_.runner.researchers.at(researcher);
  if (rr.queue.empty() || rr.active_job) return;
  try {
    if (!rr.workspace_id || state_.workspaces.at(*rr.workspace_id).state == WorkspaceState::kDeleted) {
      create_internal(researcher, state_.runner.template_name, true);
      return;
    }
    const Workspace& ws = state_.workspaces.at(*rr.workspace_id);
    switch (ws.state) {
      case WorkspaceState::kStopped:
        requeue(ws, false);
        drain_queue();
        break;
      case WorkspaceState::kFailed:
        requeue(ws, true);
        drain_queue();
        break;
      case WorkspaceState::kRunning: {
        const JobSubmission& next = rr.queue.front();
        const Timestamp now = timer_time_.value_or(state_.now);
        ActiveJob job{next.job_id, ws.workspace_id, researcher, *ws.node_id, now,
                      now + next.duration, next.util_percent, next.exit_code, true};
        emit(ek::kJobStarted, json{{"job", job}});
        break;
      }
      default: break;  // still starting; the Running transition dispatches again
    }
  } catch (const Error&) {
    // Creation can be blocked (no compatible node); the jobs stay queued.
  }
}

std::string ControlPlane::run_job(const std::string& workspace_id, Seconds duration, double util_percent,
                                  int exit_code) {
  const Workspace& ws = state_.workspace(workspace_id);
  if (ws.state != WorkspaceState::kRunning) {
    throw Error(ErrorCode::kFailedPrecondition,
                fmt::format("jobs need a Running workspace; '{}' is {}", workspace_id, to_string(ws.state)),
                "workspace_id");
  }
  if (!(duration > 0) || !std::isfinite(duration)) {
    throw Error(ErrorCode::kInvalidArgument, "job duration must be positive", "duration");
  }
  if (!(util_percent >= 0 && util_percent <= 100)) {
    throw Error(ErrorCode::kInvalidArgument, "utilisation must be in [0, 100]", "util_percent");
  }
  const auto id = fmt::format("job-{}", state_.job_counter + 1);
  const Timestamp now = timer_time_.value_or(state_.now);
  ActiveJob job{id, workspace_id, ws.owner, *ws.node_id, now, now + duration, util_percent, exit_code, false};
  emit(ek::kJobStarted, json{{"job", job}});
  return id;
}

void ControlPlane::attach_workload(const WorkloadProfile& profile, const std::vector<std::string>& researchers,
                                   const std::string& template_name, Seconds horizon) {
  if (state_.runner.attached) {
    throw Error(ErrorCode::kFailedPrecondition, "a workload is already attached", "workload");
  }
  state_.templates.at(template_name);
  auto submissions = generate_workload(profile, researchers, horizon, state_.now);
  emit(ek::kWorkloadAttached, json{{"template", template_name},
                                   {"researchers", researchers},
                                   {"profile", profile},
                                   {"horizon", horizon},
                                   {"submissions", submissions}});
  if (state_.mode == AllocationMode::kDedicatedVM) {
    // Each researcher gets a machine up front and keeps it.
    for (const auto& r : researchers) create_internal(r, template_name, true);
  }
}

PipelineRun ControlPlane::trigger_pipeline(const std::string& project_name) {
  auto it = state_.config.pipelines.find(project_name);
  if (it == state_.config.pipelines.end()) {
    throw Error(ErrorCode::kNotFound, fmt::format("no pipeline configured for project '{}'", project_name),
                "project");
  }
  return trigger_pipeline(it->second);
}

PipelineRun ControlPlane::trigger_pipeline(const PipelineConfig& config) {
  auto run = run_pipeline(config, state_.pipeline_counter);
  emit(ek::kPipelineStarted,
       json{{"pipeline_id", fmt::format("pl-{}", state_.pipeline_counter + 1)}, {"run", run}});
  return run;
}

void ControlPlane::set_assisted(const std::string& researcher, bool assisted) {
  if (researcher.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "researcher must not be empty", "researcher");
  }
  emit(ek::kAssistedSet, json{{"researcher", researcher}, {"assisted", assisted}});
}

}  // namespace labplane
