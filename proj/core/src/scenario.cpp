#include "labplane/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {

using nlohmann::json;

Seconds parse_duration(std::string_view text) {
  auto bad = [&] {
    return Error(ErrorCode::kInvalidArgument, fmt::format("bad duration '{}'", text), "duration");
  };
  if (text.empty()) throw bad();
  Seconds total = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    double value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + text.size(), value);
    if (ec != std::errc{} || value < 0) throw bad();
    i = static_cast<std::size_t>(ptr - text.data());
    double unit = 1;
    if (i < text.size()) {
      switch (text[i]) {
        case 's': unit = 1; break;
        case 'm': unit = kMinute; break;
        case 'h': unit = kHour; break;
        case 'd': unit = kDay; break;
        case 'w': unit = 7 * kDay; break;
        default: throw bad();
      }
      ++i;
    } else if (total > 0) {
      throw bad();  // "1h30" is ambiguous
    }
    total += value * unit;
  }
  return total;
}

Seconds duration_from_json(const json& j) {
  if (j.is_number()) {
    const auto v = j.get<double>();
    if (v < 0 || !std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidArgument, "durations must be non-negative", "duration");
    }
    return v;
  }
  return parse_duration(j.get<std::string>());
}

std::string format_duration(Seconds s) {
  if (s >= kDay && std::fmod(s, kDay) == 0) return fmt::format("{}d", s / kDay);
  if (s >= kHour && std::fmod(s, kHour) == 0) return fmt::format("{}h", s / kHour);
  if (s >= kMinute && std::fmod(s, kMinute) == 0) return fmt::format("{}m", s / kMinute);
  return fmt::format("{}s", s);
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const WorkloadSpec& w) {
  j = json{{"template", w.template_name},
           {"researchers", w.researchers},
           {"profile", w.profile},
           {"horizon", format_duration(w.horizon)}};
}

void from_json(const json& j, WorkloadSpec& w) {
  w = WorkloadSpec{};
  w.template_name = j.at("template").get<std::string>();
  w.researchers = j.value("researchers", std::vector<std::string>{});
  if (j.contains("profile")) w.profile = j.at("profile").get<WorkloadProfile>();
  if (j.contains("horizon")) w.horizon = duration_from_json(j.at("horizon"));
}

void to_json(json& j, const ScenarioAction& a) {
  j = a.args;
  j["at"] = format_duration(a.at);
  j["op"] = a.op;
}

void from_json(const json& j, ScenarioAction& a) {
  a.at = duration_from_json(j.value("at", json(0)));
  a.op = j.at("op").get<std::string>();
  a.args = j;
  a.args.erase("at");
  a.args.erase("op");
}

void to_json(json& j, const ScenarioConfig& c) {
  j = json{{"name", c.name},
           {"mode", c.mode},
           {"config", c.config},
           {"images", c.images},
           {"nodes", c.nodes},
           {"templates", c.templates},
           {"researchers", c.researchers},
           {"workloads", c.workloads},
           {"faults", c.faults},
           {"actions", c.actions}};
  if (c.until) j["until"] = format_duration(*c.until);
}

void from_json(const json& j, ScenarioConfig& c) {
  c = ScenarioConfig{};
  c.name = j.value("name", std::string{});
  if (j.contains("mode")) c.mode = allocation_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("config")) c.config = j.at("config").get<ControlConfig>();
  // Top-level pipelines add to (or replace by name) the calibrated defaults.
  if (j.contains("pipelines")) {
    for (const auto& [name, p] : j.at("pipelines").items()) c.config.pipelines[name] = p.get<PipelineConfig>();
  }
  c.images = j.value("images", std::vector<ImageSpec>{});
  c.nodes = j.value("nodes", std::vector<Node>{});
  c.templates = j.value("templates", std::vector<Template>{});
  c.researchers = j.value("researchers", std::vector<std::string>{});
  c.workloads = j.value("workloads", std::vector<WorkloadSpec>{});
  c.faults = j.value("faults", std::vector<FaultSpec>{});
  c.actions = j.value("actions", std::vector<ScenarioAction>{});
  if (j.contains("until")) c.until = duration_from_json(j.at("until"));
}

// ---------------------------------------------------------------------------
// validation

namespace {

[[noreturn]] void unresolved(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unresolved reference at {}: {}", field, what), field);
}

const std::set<std::string, std::less<>> kWorkspaceOps{"stop",   "restart",    "rebuild", "delete",
                                                       "release", "run_job", "health_check"};
const std::set<std::string, std::less<>> kKnownOps{
    "create_workspace", "stop",         "restart",       "rebuild",         "delete",          "release",
    "run_job",          "health_check", "update_driver", "register_node",   "deregister_node", "register_image",
    "save_template",    "inject_fault", "clear_faults",  "trigger_pipeline", "set_assisted",   "set_mode"};

std::vector<std::size_t> action_order(const ScenarioConfig& c) {
  std::vector<std::size_t> order(c.actions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return c.actions[a].at < c.actions[b].at; });
  return order;
}

std::string arg_string(const ScenarioAction& a, const char* key, const std::string& path) {
  auto it = a.args.find(key);
  if (it == a.args.end() || !it->is_string()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("{} needs a string '{}'", a.op, key), path + "." + key);
  }
  return it->get<std::string>();
}

}  // namespace

void validate_scenario(const ScenarioConfig& c) {
  std::set<std::string> images;
  for (std::size_t i = 0; i < c.images.size(); ++i) {
    if (!images.insert(c.images[i].tag).second) {
      throw Error(ErrorCode::kAlreadyExists, fmt::format("image tag '{}' listed twice", c.images[i].tag),
                  fmt::format("images[{}].tag", i));
    }
  }
  std::set<std::string> nodes;
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    if (!nodes.insert(c.nodes[i].node_id).second) {
      throw Error(ErrorCode::kAlreadyExists, fmt::format("node '{}' listed twice", c.nodes[i].node_id),
                  fmt::format("nodes[{}].node_id", i));
    }
  }
  std::set<std::string> templates;
  for (std::size_t i = 0; i < c.templates.size(); ++i) {
    const auto& t = c.templates[i];
    if (!images.contains(t.image_tag)) {
      unresolved(fmt::format("templates[{}].image_tag", i),
                 fmt::format("template '{}' references unknown image '{}'", t.name, t.image_tag));
    }
    templates.insert(t.name);
  }
  const std::set<std::string> researchers(c.researchers.begin(), c.researchers.end());
  if (c.workloads.size() > 1) {
    throw Error(ErrorCode::kInvalidArgument, "at most one workload may be attached", "workloads");
  }
  for (std::size_t i = 0; i < c.workloads.size(); ++i) {
    const auto& w = c.workloads[i];
    if (!templates.contains(w.template_name)) {
      unresolved(fmt::format("workloads[{}].template", i), fmt::format("unknown template '{}'", w.template_name));
    }
    for (std::size_t k = 0; k < w.researchers.size(); ++k) {
      if (!researchers.contains(w.researchers[k])) {
        unresolved(fmt::format("workloads[{}].researchers[{}]", i, k),
                   fmt::format("unknown researcher '{}'", w.researchers[k]));
      }
    }
    w.profile.validate();
  }
  for (std::size_t i = 0; i < c.faults.size(); ++i) {
    const auto& f = c.faults[i];
    if (!nodes.contains(f.target) && !images.contains(f.target)) {
      unresolved(fmt::format("faults[{}].target", i),
                 fmt::format("fault target '{}' is neither a node nor an image", f.target));
    }
    validate_fault(f);
  }

  std::set<std::string> aliases;
  for (std::size_t i : action_order(c)) {
    const auto& a = c.actions[i];
    const auto path = fmt::format("actions[{}]", i);
    if (!kKnownOps.contains(a.op)) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown action '{}'", a.op), path + ".op");
    }
    if (a.op == "create_workspace") {
      const auto owner = arg_string(a, "owner", path);
      const auto tmpl = arg_string(a, "template", path);
      if (!researchers.contains(owner)) unresolved(path + ".owner", fmt::format("unknown researcher '{}'", owner));
      if (!templates.contains(tmpl)) unresolved(path + ".template", fmt::format("unknown template '{}'", tmpl));
      if (a.args.contains("as")) aliases.insert(arg_string(a, "as", path));
    } else if (kWorkspaceOps.contains(a.op)) {
      const auto ws = arg_string(a, "workspace", path);
      // Literal ids (ws-N) cannot be checked before the run; aliases can.
      if (!aliases.contains(ws) && ws.rfind("ws-", 0) != 0) {
        unresolved(path + ".workspace", fmt::format("unknown workspace alias '{}'", ws));
      }
    } else if (a.op == "update_driver" || a.op == "deregister_node") {
      const auto node = arg_string(a, "node", path);
      if (!nodes.contains(node)) unresolved(path + ".node", fmt::format("unknown node '{}'", node));
      if (a.op == "deregister_node") nodes.erase(node);
    } else if (a.op == "register_node") {
      nodes.insert(a.args.at("node").at("node_id").get<std::string>());
    } else if (a.op == "register_image") {
      images.insert(a.args.at("image").at("tag").get<std::string>());
    } else if (a.op == "save_template") {
      const auto t = a.args.at("template").get<Template>();
      if (!images.contains(t.image_tag)) {
        unresolved(path + ".template.image_tag", fmt::format("unknown image '{}'", t.image_tag));
      }
      templates.insert(t.name);
    } else if (a.op == "inject_fault") {
      const auto f = a.args.get<FaultSpec>();
      if (!nodes.contains(f.target) && !images.contains(f.target)) {
        unresolved(path + ".target", fmt::format("fault target '{}' is neither a node nor an image", f.target));
      }
    } else if (a.op == "trigger_pipeline") {
      const auto project = arg_string(a, "project", path);
      if (!c.config.pipelines.contains(project)) {
        unresolved(path + ".project", fmt::format("no pipeline configured for '{}'", project));
      }
    } else if (a.op == "set_assisted") {
      const auto r = arg_string(a, "researcher", path);
      if (!researchers.contains(r)) unresolved(path + ".researcher", fmt::format("unknown researcher '{}'", r));
    }
  }
}

ScenarioConfig parse_scenario(const json& j) {
  ScenarioConfig c;
  try {
    c = j.get<ScenarioConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("malformed scenario: {}", e.what()), "scenario");
  }
  validate_scenario(c);
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, fmt::format("cannot open scenario '{}'", path.string()), "scenario");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("scenario '{}' is not JSON: {}", path.string(), e.what()),
                "scenario");
  }
  auto c = parse_scenario(j);
  if (c.name.empty()) c.name = path.stem().string();
  return c;
}

// ---------------------------------------------------------------------------
// running

ControlPlane build_control_plane(const ScenarioConfig& c, EventLog::Sink sink) {
  validate_scenario(c);
  ControlPlane cp(c.config);
  if (sink) {
    for (const auto& e : cp.events()) sink(e);
    cp.set_event_sink(std::move(sink));
  }
  if (c.mode != cp.state().mode) cp.set_allocation_mode(c.mode);
  for (const auto& image : c.images) cp.register_image(image);
  for (const auto& node : c.nodes) cp.register_node(node);
  for (const auto& t : c.templates) cp.save_template(t);
  for (const auto& f : c.faults) cp.inject_fault(f);
  for (const auto& w : c.workloads) {
    cp.attach_workload(w.profile, w.researchers.empty() ? c.researchers : w.researchers, w.template_name, w.horizon);
  }
  return cp;
}

std::size_t ScenarioOutcome::failed_actions() const {
  return static_cast<std::size_t>(std::count_if(actions.begin(), actions.end(), [](const auto& a) { return !a.ok; }));
}

namespace {

void execute(ControlPlane& cp, const ScenarioAction& a, std::map<std::string, std::string>& aliases,
             ActionResult& result) {
  const auto& args = a.args;
  const Actor actor = args.contains("actor") ? Actor{args.at("actor").get<std::string>(), false}
                                             : Actor::administrator();
  auto ws = [&] {
    const auto ref = args.at("workspace").get<std::string>();
    auto it = aliases.find(ref);
    return it == aliases.end() ? ref : it->second;
  };
  if (a.op == "create_workspace") {
    const auto& created = cp.create_workspace(actor, args.at("owner").get<std::string>(),
                                              args.at("template").get<std::string>());
    result.workspace_id = created.workspace_id;
    if (args.contains("as")) aliases[args.at("as").get<std::string>()] = created.workspace_id;
  } else if (a.op == "stop") {
    cp.stop(actor, ws());
  } else if (a.op == "restart") {
    cp.restart(actor, ws());
  } else if (a.op == "rebuild") {
    cp.rebuild(actor, ws());
  } else if (a.op == "delete") {
    cp.remove(actor, ws());
  } else if (a.op == "release") {
    cp.release(ws());
  } else if (a.op == "run_job") {
    cp.run_job(ws(), duration_from_json(args.at("duration")), args.value("util_percent", 100.0),
               args.value("exit_code", 0));
  } else if (a.op == "health_check") {
    cp.run_health_check(ws());
  } else if (a.op == "update_driver") {
    cp.update_host_driver(args.at("node").get<std::string>(), args.value("driver_version", std::string{}),
                          args.at("max_cuda").get<CudaVersion>());
  } else if (a.op == "register_node") {
    cp.register_node(args.at("node").get<Node>());
  } else if (a.op == "deregister_node") {
    cp.deregister_node(args.at("node").get<std::string>());
  } else if (a.op == "register_image") {
    cp.register_image(args.at("image").get<ImageSpec>());
  } else if (a.op == "save_template") {
    cp.save_template(args.at("template").get<Template>());
  } else if (a.op == "inject_fault") {
    cp.inject_fault(args.get<FaultSpec>());
  } else if (a.op == "clear_faults") {
    cp.clear_faults();
  } else if (a.op == "trigger_pipeline") {
    cp.trigger_pipeline(args.at("project").get<std::string>());
  } else if (a.op == "set_assisted") {
    cp.set_assisted(args.at("researcher").get<std::string>(), args.value("assisted", true));
  } else if (a.op == "set_mode") {
    cp.set_allocation_mode(allocation_mode_from_string(args.at("mode").get<std::string>()));
  } else {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown action '{}'", a.op), "op");
  }
}

}  // namespace

ScenarioOutcome run_scenario(ControlPlane& cp, const ScenarioConfig& c, std::optional<Seconds> until) {
  ScenarioOutcome outcome;
  std::map<std::string, std::string> aliases;
  const Timestamp start = c.config.start_time;
  const auto horizon = until ? until : c.until;
  for (std::size_t i : action_order(c)) {
    const auto& a = c.actions[i];
    const Timestamp at = start + a.at;
    if (horizon && a.at > *horizon) break;
    if (at > cp.now()) cp.advance_clock(at - cp.now());
    ActionResult result;
    result.index = i;
    result.op = a.op;
    result.at = cp.now();
    try {
      execute(cp, a, aliases, result);
    } catch (const Error& e) {
      result.ok = false;
      result.error_code = std::string(to_string(e.code()));
      result.message = e.what();
    } catch (const json::exception& e) {
      result.ok = false;
      result.error_code = std::string(to_string(ErrorCode::kInvalidArgument));
      result.message = e.what();
    }
    outcome.actions.push_back(std::move(result));
  }
  if (horizon && start + *horizon > cp.now()) cp.advance_clock(start + *horizon - cp.now());
  return outcome;
}

void to_json(json& j, const ActionResult& r) {
  j = json{{"index", r.index}, {"op", r.op}, {"at", r.at}, {"ok", r.ok}};
  if (!r.ok) {
    j["error"] = json{{"code", r.error_code}, {"message", r.message}};
  }
  if (r.workspace_id) j["workspace_id"] = *r.workspace_id;
}

}  // namespace labplane
