#include "labplane/workspace.hpp"

#include <array>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {
namespace {

using S = WorkspaceState;

constexpr std::array kFromPending{S::kPulling, S::kInitializing, S::kFailed};
constexpr std::array kFromPulling{S::kInitializing, S::kFailed};
constexpr std::array kFromInitializing{S::kRunning, S::kFailed};
constexpr std::array kFromRunning{S::kStopped, S::kFailed};
constexpr std::array kFromStopped{S::kPending, S::kDeleted};
constexpr std::array kFromFailed{S::kPending, S::kDeleted};

}  // namespace

std::string_view to_string(WorkspaceState state) noexcept {
  switch (state) {
    case S::kPending: return "Pending";
    case S::kPulling: return "Pulling";
    case S::kInitializing: return "Initializing";
    case S::kRunning: return "Running";
    case S::kStopped: return "Stopped";
    case S::kDeleted: return "Deleted";
    case S::kFailed: return "Failed";
  }
  return "?";
}

WorkspaceState workspace_state_from_string(std::string_view text) {
  for (auto s : {S::kPending, S::kPulling, S::kInitializing, S::kRunning, S::kStopped, S::kDeleted,
                 S::kFailed}) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown workspace state '{}'", text), "state");
}

std::string_view to_string(StartCondition condition) noexcept {
  return condition == StartCondition::kCold ? "Cold" : "Warm";
}

std::span<const WorkspaceState> legal_successors(WorkspaceState from) noexcept {
  switch (from) {
    case S::kPending: return kFromPending;
    case S::kPulling: return kFromPulling;
    case S::kInitializing: return kFromInitializing;
    case S::kRunning: return kFromRunning;
    case S::kStopped: return kFromStopped;
    case S::kFailed: return kFromFailed;
    case S::kDeleted: return {};
  }
  return {};
}

bool is_legal_transition(WorkspaceState from, WorkspaceState to) noexcept {
  for (auto s : legal_successors(from)) {
    if (s == to) return true;
  }
  return false;
}

std::string_view to_string(LifecycleEvent event) noexcept {
  switch (event) {
    case LifecycleEvent::kScheduledCold: return "scheduled-cold";
    case LifecycleEvent::kScheduledWarm: return "scheduled-warm";
    case LifecycleEvent::kImagePulled: return "image-pulled";
    case LifecycleEvent::kInitialized: return "initialized";
    case LifecycleEvent::kStop: return "stop";
    case LifecycleEvent::kRestart: return "restart";
    case LifecycleEvent::kRebuild: return "rebuild";
    case LifecycleEvent::kDelete: return "delete";
    case LifecycleEvent::kFail: return "fail";
  }
  return "?";
}

WorkspaceState target_state(LifecycleEvent event) noexcept {
  switch (event) {
    case LifecycleEvent::kScheduledCold: return S::kPulling;
    case LifecycleEvent::kScheduledWarm: return S::kInitializing;
    case LifecycleEvent::kImagePulled: return S::kInitializing;
    case LifecycleEvent::kInitialized: return S::kRunning;
    case LifecycleEvent::kStop: return S::kStopped;
    case LifecycleEvent::kRestart:
    case LifecycleEvent::kRebuild: return S::kPending;
    case LifecycleEvent::kDelete: return S::kDeleted;
    case LifecycleEvent::kFail: return S::kFailed;
  }
  return S::kFailed;
}

WorkspaceState advance(Workspace& ws, LifecycleEvent event, Timestamp at, std::string_view node_id) {
  const S to = target_state(event);
  bool legal = is_legal_transition(ws.state, to);
  // Each event names its own source states; the target alone is ambiguous.
  switch (event) {
    case LifecycleEvent::kScheduledCold:
    case LifecycleEvent::kScheduledWarm: legal = legal && ws.state == S::kPending; break;
    case LifecycleEvent::kImagePulled: legal = legal && ws.state == S::kPulling; break;
    case LifecycleEvent::kRestart: legal = legal && ws.state == S::kStopped; break;
    default: break;
  }
  if (!legal) {
    throw Error(ErrorCode::kIllegalTransition,
                fmt::format("workspace '{}': '{}' is not allowed in state {}", ws.workspace_id,
                            to_string(event), to_string(ws.state)),
                "state");
  }
  const bool scheduling =
      event == LifecycleEvent::kScheduledCold || event == LifecycleEvent::kScheduledWarm;
  if (scheduling && node_id.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "scheduling event requires a node", "node_id");
  }

  ws.state = to;
  ws.transition_log.push_back({to, at});
  if (scheduling) {
    ws.node_id = std::string(node_id);
    ws.start_condition =
        event == LifecycleEvent::kScheduledWarm ? StartCondition::kWarm : StartCondition::kCold;
  }
  if (!holds_node(to)) {
    ws.node_id.reset();
    ws.phase_due.reset();
  }
  if (to == S::kPending) {
    ws.start_condition.reset();
    ws.compat_flagged = false;
    ws.failure_reason.clear();
  }
  return to;
}

void validate_resources(const ResourceSpec& request, const WorkspaceLimits& limits) {
  if (request.cpu_millicores <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "cpu_millicores must be positive",
                "resources.cpu_millicores");
  }
  if (request.mem_bytes <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "mem_bytes must be positive", "resources.mem_bytes");
  }
  if (request.gpu_count < 0) {
    throw Error(ErrorCode::kInvalidArgument, "gpu_count must be non-negative",
                "resources.gpu_count");
  }
  const auto& max = limits.max_resources;
  if (request.cpu_millicores > max.cpu_millicores) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("cpu request {}m exceeds the per-workspace maximum {}m",
                            request.cpu_millicores, max.cpu_millicores),
                "resources.cpu_millicores");
  }
  if (request.mem_bytes > max.mem_bytes) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("memory request {} B exceeds the per-workspace maximum {} B",
                            request.mem_bytes, max.mem_bytes),
                "resources.mem_bytes");
  }
  if (request.gpu_count > max.gpu_count) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("gpu request {} exceeds the per-workspace maximum {}", request.gpu_count,
                            max.gpu_count),
                "resources.gpu_count");
  }
}

Template TemplateCatalog::prepare(Template tmpl, const ImageRegistry& registry,
                                  const WorkspaceLimits& limits) const {
  if (tmpl.name.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "template name must not be empty", "name");
  }
  if (!registry.contains(tmpl.image_tag)) {
    throw Error(ErrorCode::kNotFound,
                fmt::format("template '{}' references unknown image '{}'", tmpl.name, tmpl.image_tag),
                "image_tag");
  }
  validate_resources(tmpl.resources, limits);
  const Template* existing = find(tmpl.name);
  tmpl.version = existing ? existing->version + 1 : 1;
  return tmpl;
}

void TemplateCatalog::store(Template tmpl) {
  auto name = tmpl.name;
  templates_.insert_or_assign(std::move(name), std::move(tmpl));
}

const Template* TemplateCatalog::find(const std::string& name) const {
  auto it = templates_.find(name);
  return it == templates_.end() ? nullptr : &it->second;
}

const Template& TemplateCatalog::at(const std::string& name) const {
  const Template* t = find(name);
  if (t == nullptr) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown template '{}'", name), "template");
  }
  return *t;
}

void to_json(nlohmann::json& j, const TransitionRecord& r) {
  j = nlohmann::json{{"state", r.state}, {"at", r.at}};
}

void from_json(const nlohmann::json& j, TransitionRecord& r) {
  r.state = j.at("state").get<WorkspaceState>();
  r.at = j.at("at").get<double>();
}

void to_json(nlohmann::json& j, const Template& t) {
  j = nlohmann::json{{"name", t.name},         {"image_tag", t.image_tag},
                     {"resources", t.resources}, {"mounts", t.mounts},
                     {"node_selector", t.node_selector}, {"version", t.version}};
}

void from_json(const nlohmann::json& j, Template& t) {
  t.name = j.at("name").get<std::string>();
  t.image_tag = j.at("image_tag").get<std::string>();
  t.resources = j.at("resources").get<ResourceSpec>();
  t.mounts = j.value("mounts", std::vector<std::string>{});
  t.node_selector = j.value("node_selector", std::map<std::string, std::string>{});
  t.version = j.value("version", 0);
}

void to_json(nlohmann::json& j, const Workspace& w) {
  j = nlohmann::json{{"workspace_id", w.workspace_id},
                     {"owner", w.owner},
                     {"template_name", w.template_name},
                     {"template_version", w.template_version},
                     {"image_tag", w.image_tag},
                     {"resources", w.resources},
                     {"mounts", w.mounts},
                     {"node_selector", w.node_selector},
                     {"state", w.state},
                     {"node_id", w.node_id},
                     {"start_condition", w.start_condition},
                     {"transition_log", w.transition_log},
                     {"phase_due", w.phase_due},
                     {"compat_flagged", w.compat_flagged},
                     {"failure_reason", w.failure_reason}};
}

void from_json(const nlohmann::json& j, Workspace& w) {
  w.workspace_id = j.at("workspace_id").get<std::string>();
  w.owner = j.at("owner").get<std::string>();
  w.template_name = j.at("template_name").get<std::string>();
  w.template_version = j.at("template_version").get<int>();
  w.image_tag = j.at("image_tag").get<std::string>();
  w.resources = j.at("resources").get<ResourceSpec>();
  w.mounts = j.at("mounts").get<std::vector<std::string>>();
  w.node_selector = j.at("node_selector").get<std::map<std::string, std::string>>();
  w.state = j.at("state").get<WorkspaceState>();
  w.node_id = j.at("node_id").get<std::optional<std::string>>();
  w.start_condition = j.at("start_condition").get<std::optional<StartCondition>>();
  w.transition_log = j.at("transition_log").get<std::vector<TransitionRecord>>();
  w.phase_due = j.at("phase_due").get<std::optional<double>>();
  w.compat_flagged = j.at("compat_flagged").get<bool>();
  w.failure_reason = j.at("failure_reason").get<std::string>();
}

void to_json(nlohmann::json& j, const WorkspaceLimits& l) {
  j = nlohmann::json{{"max_resources", l.max_resources}};
}

void from_json(const nlohmann::json& j, WorkspaceLimits& l) {
  if (j.contains("max_resources")) l.max_resources = j.at("max_resources").get<ResourceSpec>();
}

}  // namespace labplane
