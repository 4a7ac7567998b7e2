#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "labplane/state.hpp"

namespace labplane {

using nlohmann::json;

void to_json(json& j, const ControlConfig& c) {
  j = json{{"start_time", c.start_time},
           {"image_pull_seconds", c.image_pull_seconds},
           {"init_seconds", c.init_seconds},
           {"limits", c.limits},
           {"fail_on_unhealthy", c.fail_on_unhealthy},
           {"idle_stop_seconds", c.idle_stop_seconds},
           {"image_cache_capacity", c.image_cache_capacity},
           {"pipelines", c.pipelines}};
}

void from_json(const json& j, ControlConfig& c) {
  c = ControlConfig{};
  c.start_time = j.value("start_time", c.start_time);
  c.image_pull_seconds = j.value("image_pull_seconds", c.image_pull_seconds);
  c.init_seconds = j.value("init_seconds", c.init_seconds);
  if (j.contains("limits")) c.limits = j.at("limits").get<WorkspaceLimits>();
  c.fail_on_unhealthy = j.value("fail_on_unhealthy", c.fail_on_unhealthy);
  c.idle_stop_seconds = j.value("idle_stop_seconds", c.idle_stop_seconds);
  if (j.contains("image_cache_capacity")) {
    c.image_cache_capacity = j.at("image_cache_capacity").get<std::optional<std::size_t>>();
  }
  if (j.contains("pipelines")) {
    c.pipelines = j.at("pipelines").get<std::map<std::string, PipelineConfig>>();
  }
}

void to_json(json& j, const ActiveJob& a) {
  j = json{{"job_id", a.job_id},   {"workspace_id", a.workspace_id}, {"owner", a.owner},
           {"node_id", a.node_id}, {"start", a.start},               {"end", a.end},
           {"util_percent", a.util_percent}, {"exit_code", a.exit_code},
           {"from_workload", a.from_workload}};
}

void from_json(const json& j, ActiveJob& a) {
  a.job_id = j.at("job_id").get<std::string>();
  a.workspace_id = j.at("workspace_id").get<std::string>();
  a.owner = j.at("owner").get<std::string>();
  a.node_id = j.at("node_id").get<std::string>();
  a.start = j.at("start").get<double>();
  a.end = j.at("end").get<double>();
  a.util_percent = j.at("util_percent").get<double>();
  a.exit_code = j.at("exit_code").get<int>();
  a.from_workload = j.value("from_workload", false);
}

json state_to_json(const ClusterState& s) {
  json nodes = json::object();
  for (const auto& [id, n] : s.cluster.node_map()) nodes[id] = n;
  json templates = json::object();
  for (const auto& [name, t] : s.templates.templates()) templates[name] = t;
  json images = json::object();
  for (const auto& [tag, i] : s.images.images()) images[tag] = i;
  json workspaces = json::object();
  for (const auto& [id, w] : s.workspaces) workspaces[id] = w;
  json health = json::object();
  for (const auto& [id, h] : s.latest_health) health[id] = h;
  json jobs = json::object();
  for (const auto& [id, jb] : s.jobs) jobs[id] = jb;
  json pipelines = json::object();
  for (const auto& [id, p] : s.pipelines) {
    pipelines[id] = json{{"run", p.run}, {"started_at", p.started_at}, {"due", p.due}};
  }
  json runner_researchers = json::object();
  for (const auto& [r, rr] : s.runner.researchers) {
    runner_researchers[r] = json{{"workspace_id", rr.workspace_id},
                                 {"queue", rr.queue},
                                 {"active_job", rr.active_job},
                                 {"idle_deadline", rr.idle_deadline}};
  }
  json researchers = json::object();
  for (const auto& [r, rec] : s.researchers) {
    researchers[r] = json{{"first_workspace_at", rec.first_workspace_at},
                          {"first_success_at", rec.first_success_at},
                          {"assisted", rec.assisted}};
  }
  return json{
      {"config", s.config},
      {"now", s.now},
      {"clock_mode", s.clock_mode},
      {"last_sequence", s.last_sequence},
      {"nodes", nodes},
      {"images", images},
      {"templates", templates},
      {"workspaces", workspaces},
      {"workspace_counter", s.workspace_counter},
      {"pending", s.pending},
      {"unschedulable_reason", s.unschedulable_reason},
      {"mode", s.mode},
      {"pins", s.pins},
      {"faults", s.faults},
      {"latest_health", health},
      {"jobs", jobs},
      {"recent_jobs", s.recent_jobs},
      {"job_counter", s.job_counter},
      {"last_sample_at", s.last_sample_at},
      {"pipelines", pipelines},
      {"pipeline_counter", s.pipeline_counter},
      {"runner",
       json{{"attached", s.runner.attached},
            {"template", s.runner.template_name},
            {"submissions", s.runner.submissions.size()},
            {"cursor", s.runner.cursor},
            {"researchers", runner_researchers}}},
      {"researchers", researchers},
  };
}

std::vector<std::string> check_invariants(const ClusterState& s) {
  std::vector<std::string> out;
  std::map<std::string, ResourceSpec> reserved;
  std::set<std::string> pinned_nodes;

  for (const auto& [id, ws] : s.workspaces) {
    const bool holding = holds_node(ws.state);
    if (holding != ws.node_id.has_value()) {
      out.push_back(fmt::format("workspace {}: node assignment does not match state {}", id,
                                to_string(ws.state)));
    }
    if (ws.node_id) {
      const Node* node = s.cluster.find(*ws.node_id);
      if (node == nullptr) {
        out.push_back(fmt::format("workspace {}: assigned to unknown node {}", id, *ws.node_id));
      } else {
        reserved[*ws.node_id] += ws.resources;
        if (ws.resources.cpu_only() && node->has_gpu_taint()) {
          out.push_back(fmt::format("workspace {}: CPU-only workload on GPU-tainted node {}", id, node->node_id));
        }
      }
    }
    if (ws.transition_log.empty() || ws.transition_log.front().state != WorkspaceState::kPending) {
      out.push_back(fmt::format("workspace {}: lifecycle does not start in Pending", id));
    }
    for (std::size_t i = 1; i < ws.transition_log.size(); ++i) {
      const auto from = ws.transition_log[i - 1].state;
      const auto to = ws.transition_log[i].state;
      if (!is_legal_transition(from, to)) {
        out.push_back(fmt::format("workspace {}: illegal transition {} -> {}", id, to_string(from), to_string(to)));
      }
      if (ws.transition_log[i].at < ws.transition_log[i - 1].at) {
        out.push_back(fmt::format("workspace {}: transition log goes back in time", id));
      }
    }
    if (!ws.transition_log.empty() && ws.transition_log.back().state != ws.state) {
      out.push_back(fmt::format("workspace {}: state differs from last transition", id));
    }
    const bool queued = std::find(s.pending.begin(), s.pending.end(), id) != s.pending.end();
    if (queued != (ws.state == WorkspaceState::kPending)) {
      out.push_back(fmt::format("workspace {}: retry queue membership does not match state", id));
    }
  }

  for (const auto& [id, node] : s.cluster.node_map()) {
    const auto cap = node.capacity();
    const auto& f = node.free;
    if (f.cpu_millicores < 0 || f.mem_bytes < 0 || f.gpu_count < 0 || !f.fits_within(cap)) {
      out.push_back(fmt::format("node {}: free resources outside [0, capacity]", id));
    }
    if (!(reserved[id] == node.reserved())) {
      out.push_back(fmt::format("node {}: reservations do not add up to capacity - free", id));
    }
    if ((node.gpu_count > 0) != node.has_gpu_taint()) {
      out.push_back(fmt::format("node {}: GPU taint does not match GPU inventory", id));
    }
  }

  for (const auto& [researcher, node] : s.pins) {
    if (!pinned_nodes.insert(node).second) {
      out.push_back(fmt::format("node {} is pinned to more than one researcher", node));
    }
  }
  return out;
}

}  // namespace labplane
