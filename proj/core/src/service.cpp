#include "labplane/service.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <regex>
#include <shared_mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "labplane/error.hpp"
#include "labplane/metrics.hpp"
#include "labplane/scenario.hpp"

namespace labplane::http {

using nlohmann::json;

ServiceOptions apply_environment(ServiceOptions o) {
  if (const char* listen = std::getenv("LABPLANE_LISTEN"); listen && *listen) {
    const std::string text(listen);
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) {
      o.host = text;
    } else {
      if (colon > 0) o.host = text.substr(0, colon);
      try {
        o.port = std::stoi(text.substr(colon + 1));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidArgument, fmt::format("bad LABPLANE_LISTEN '{}'", text), "LABPLANE_LISTEN");
      }
    }
  }
  if (const char* log = std::getenv("LABPLANE_LOG"); log && *log) o.log_path = log;
  if (const char* token = std::getenv("LABPLANE_TOKEN"); token && *token) o.token = token;
  return o;
}

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kAlreadyExists: return 409;
    case ErrorCode::kInvalidArgument: return 400;
    case ErrorCode::kFailedPrecondition: return 409;
    case ErrorCode::kIllegalTransition: return 409;
    case ErrorCode::kPermissionDenied: return 403;
    case ErrorCode::kUnschedulable: return 409;
    case ErrorCode::kUndefinedMetric: return 422;
    case ErrorCode::kDataLoss: return 500;
  }
  return 500;
}

Response error_response(int status, std::string_view code, const std::string& message, const std::string& field,
                        std::uint64_t sequence) {
  json err{{"code", code}, {"message", message}, {"field", field.empty() ? json(nullptr) : json(field)}};
  return {status, json{{"error", err}, {"sequence", sequence}}.dump()};
}

json parse_body(const Request& r) {
  if (r.body.empty()) return json::object();
  try {
    auto j = json::parse(r.body);
    if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object", "body");
    return j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("request body is not JSON: {}", e.what()), "body");
  }
}

template <typename T>
T field(const json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end()) throw Error(ErrorCode::kInvalidArgument, fmt::format("missing field '{}'", key), key);
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("field '{}' has the wrong type", key), key);
  }
}

double query_number(const Request& r, const char* key, double fallback) {
  auto it = r.query.find(key);
  if (it == r.query.end() || it->second.empty()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("query parameter '{}' must be a number", key), key);
  }
}

std::string query_string(const Request& r, const char* key) {
  auto it = r.query.find(key);
  if (it == r.query.end() || it->second.empty()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("missing query parameter '{}'", key), key);
  }
  return it->second;
}

TimeWindow query_window(const Request& r, TimeWindow fallback) {
  return {query_number(r, "from", fallback.from), query_number(r, "to", fallback.to)};
}

Actor actor_of(const Request& r) {
  auto it = r.headers.find("X-Labplane-User");
  if (it == r.headers.end() || it->second.empty()) return Actor::administrator();
  return Actor{it->second, false};
}

json workspace_json(const ClusterState& s, const Workspace& ws) {
  json j = ws;
  auto reason = s.unschedulable_reason.find(ws.workspace_id);
  j["unschedulable_reason"] = reason == s.unschedulable_reason.end() ? json(nullptr) : json(reason->second);
  j["allowed_actions"] = json::array();
  for (auto [name, ev] : {std::pair{"start", LifecycleEvent::kRestart}, std::pair{"stop", LifecycleEvent::kStop},
                          std::pair{"rebuild", LifecycleEvent::kRebuild}, std::pair{"delete", LifecycleEvent::kDelete}}) {
    Workspace probe = ws;
    try {
      advance(probe, ev, s.now);
      j["allowed_actions"].push_back(name);
    } catch (const Error&) {
    }
  }
  return j;
}

}  // namespace

struct Service::Impl {
  using Handler = std::function<json(const Request&, const std::smatch&)>;
  struct Route {
    std::string method;
    std::regex pattern;
    bool mutates;
    Handler handler;
  };

  ControlPlane cp;
  std::string token;
  mutable std::shared_mutex mutex;
  std::vector<Route> routes;
  httplib::Server server;
  std::atomic<bool> ticking{false};
  std::thread ticker;

  Impl(ControlPlane plane, std::string tok) : cp(std::move(plane)), token(std::move(tok)) { install_routes(); }

  void add(std::string method, const char* pattern, bool mutates, Handler h) {
    routes.push_back({std::move(method), std::regex(pattern), mutates, std::move(h)});
  }

  MetricsLedger ledger() const { return MetricsLedger::from_events(cp.events()); }

  void install_routes();
  Response dispatch(const Request& r);
};

void Service::Impl::install_routes() {
  const auto& s = cp.state();

  add("GET", "/v1/status", false, [this](const Request&, const std::smatch&) {
    return json{{"now", cp.now()},
                {"mode", cp.state().mode},
                {"clock_mode", cp.state().clock_mode},
                {"digest", cp.digest()},
                {"policy", cp.policy().name()}};
  });
  add("GET", "/v1/digest", false,
      [this](const Request&, const std::smatch&) { return json{{"digest", cp.digest()}}; });

  // -- nodes
  add("GET", "/v1/nodes", false, [&s](const Request&, const std::smatch&) {
    json out = json::array();
    for (const auto* n : s.cluster.nodes()) out.push_back(*n);
    return out;
  });
  add("POST", "/v1/nodes", true, [this, &s](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    Node node;
    try {
      node = body.get<Node>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, e.what(), "node");
    }
    cp.register_node(node);
    return json(s.cluster.at(node.node_id));
  });
  add("DELETE", "/v1/nodes/([^/]+)", true, [this](const Request&, const std::smatch& m) {
    cp.deregister_node(m[1]);
    return json{{"node_id", m[1].str()}, {"deregistered", true}};
  });
  add("POST", "/v1/nodes/([^/]+)/driver", true, [this](const Request& r, const std::smatch& m) {
    auto body = parse_body(r);
    return json(cp.update_host_driver(m[1], body.value("driver_version", std::string{}),
                                      field<CudaVersion>(body, "max_cuda")));
  });

  // -- images
  add("GET", "/v1/images", false, [&s](const Request&, const std::smatch&) {
    json out = json::array();
    for (const auto& [tag, img] : s.images.images()) out.push_back(img);
    return out;
  });
  add("POST", "/v1/images", true, [this](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    ImageSpec spec;
    try {
      spec = body.get<ImageSpec>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, e.what(), "image");
    }
    cp.register_image(spec);
    return json(spec);
  });
  add("GET", "/v1/images/([^/]+)/compatibility", false, [this, &s](const Request& r, const std::smatch& m) {
    auto node = r.query.find("node");
    json out = json::array();
    if (node != r.query.end()) {
      out.push_back(cp.check_compatibility(m[1], node->second));
    } else {
      for (const auto* n : s.cluster.nodes()) out.push_back(cp.check_compatibility(m[1], n->node_id));
    }
    return out;
  });

  // -- templates
  add("GET", "/v1/templates", false, [&s](const Request&, const std::smatch&) {
    json out = json::array();
    for (const auto& [name, t] : s.templates.templates()) out.push_back(t);
    return out;
  });
  add("POST", "/v1/templates", true, [this](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    Template t;
    try {
      t = body.get<Template>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, e.what(), "template");
    }
    return json(cp.save_template(t));
  });

  // -- workspaces
  add("GET", "/v1/workspaces", false, [&s](const Request& r, const std::smatch&) {
    auto owner = r.query.find("owner");
    json out = json::array();
    for (const auto& [id, ws] : s.workspaces) {
      if (owner != r.query.end() && ws.owner != owner->second) continue;
      out.push_back(workspace_json(s, ws));
    }
    return out;
  });
  add("POST", "/v1/workspaces", true, [this, &s](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    const Actor actor = actor_of(r);
    const auto owner = body.value("owner", actor.id);
    const auto& ws = cp.create_workspace(actor, owner, field<std::string>(body, "template"));
    return workspace_json(s, ws);
  });
  add("GET", "/v1/workspaces/([^/]+)", false,
      [&s](const Request&, const std::smatch& m) { return workspace_json(s, s.workspace(m[1])); });
  add("POST", "/v1/workspaces/([^/]+)/(start|stop|rebuild|release)", true,
      [this, &s](const Request& r, const std::smatch& m) {
        const std::string id = m[1];
        const std::string action = m[2];
        const Actor actor = actor_of(r);
        if (action == "start") {
          cp.restart(actor, id);
        } else if (action == "stop") {
          cp.stop(actor, id);
        } else if (action == "rebuild") {
          cp.rebuild(actor, id);
        } else {
          cp.release(id);
        }
        return workspace_json(s, s.workspace(id));
      });
  add("DELETE", "/v1/workspaces/([^/]+)", true, [this, &s](const Request& r, const std::smatch& m) {
    const std::string id = m[1];
    // Deleting twice is a no-op, not an error.
    if (s.workspace(id).state != WorkspaceState::kDeleted) cp.remove(actor_of(r), id);
    return workspace_json(s, s.workspace(id));
  });
  add("GET", "/v1/workspaces/([^/]+)/health", false, [this](const Request&, const std::smatch& m) {
    const auto* report = cp.latest_health(m[1]);
    if (!report) throw Error(ErrorCode::kNotFound, fmt::format("no health report for '{}'", m[1].str()), "workspace_id");
    return json(*report);
  });
  add("POST", "/v1/workspaces/([^/]+)/health", true,
      [this](const Request&, const std::smatch& m) { return json(cp.run_health_check(m[1])); });
  add("POST", "/v1/workspaces/([^/]+)/jobs", true, [this](const Request& r, const std::smatch& m) {
    auto body = parse_body(r);
    const auto id = cp.run_job(m[1], duration_from_json(body.value("duration", json(kHour))),
                               body.value("util_percent", 100.0), body.value("exit_code", 0));
    return json{{"job_id", id}};
  });

  // -- scheduler, faults, clock, researchers
  add("PUT", "/v1/mode", true, [this](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    cp.set_allocation_mode(allocation_mode_from_string(field<std::string>(body, "mode")));
    return json{{"mode", cp.state().mode}};
  });
  add("GET", "/v1/faults", false, [&s](const Request&, const std::smatch&) { return json(s.faults); });
  add("POST", "/v1/faults", true, [this](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    FaultSpec spec;
    try {
      spec = body.get<FaultSpec>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, e.what(), "fault");
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorCode::kInvalidArgument, e.what(), "kind");
    }
    cp.inject_fault(spec);
    return json(spec);
  });
  add("DELETE", "/v1/faults", true, [this](const Request&, const std::smatch&) {
    cp.clear_faults();
    return json::array();
  });
  add("GET", "/v1/clock", false, [&s](const Request&, const std::smatch&) {
    return json{{"now", s.now}, {"mode", s.clock_mode}};
  });
  add("POST", "/v1/clock/advance", true, [this](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    json amount = body.contains("seconds") ? body.at("seconds") : body.value("duration", json(nullptr));
    if (amount.is_null()) throw Error(ErrorCode::kInvalidArgument, "give 'seconds' or 'duration'", "seconds");
    return json{{"now", cp.advance_clock(duration_from_json(amount))}};
  });
  add("PUT", "/v1/clock/mode", true, [this](const Request& r, const std::smatch&) {
    auto body = parse_body(r);
    ClockMode mode{};
    try {
      mode = body.at("mode").get<ClockMode>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "mode must be Virtual or RealTime", "mode");
    }
    cp.set_clock_mode(mode);
    return json{{"mode", mode}};
  });
  add("PUT", "/v1/researchers/([^/]+)/assisted", true, [this](const Request& r, const std::smatch& m) {
    auto body = parse_body(r);
    const bool assisted = body.value("assisted", true);
    cp.set_assisted(m[1], assisted);
    return json{{"researcher", m[1].str()}, {"assisted", assisted}};
  });

  // -- pipelines
  add("GET", "/v1/pipelines", false, [this, &s](const Request&, const std::smatch&) {
    json runs = json::array();
    for (const auto& e : cp.events()) {
      if (e.kind == event_kind::kPipelineCompleted) {
        runs.push_back(json{{"pipeline_id", e.payload.at("pipeline_id")},
                            {"started_at", e.payload.at("started_at")},
                            {"completed_at", e.timestamp},
                            {"run", e.payload.at("run")}});
      }
    }
    json in_flight = json::array();
    for (const auto& [id, p] : s.pipelines) {
      in_flight.push_back(json{{"pipeline_id", id}, {"started_at", p.started_at}, {"due", p.due}, {"run", p.run}});
    }
    json projects = json::array();
    for (const auto& [name, cfg] : s.config.pipelines) projects.push_back(name);
    return json{{"projects", projects}, {"completed", runs}, {"in_flight", in_flight}};
  });
  add("POST", "/v1/pipelines/([^/]+)/runs", true, [this, &s](const Request&, const std::smatch& m) {
    auto run = cp.trigger_pipeline(m[1].str());
    const auto id = fmt::format("pl-{}", s.pipeline_counter);
    return json{{"pipeline_id", id}, {"due", s.pipelines.at(id).due}, {"run", run}};
  });

  // -- metrics
  add("GET", "/v1/metrics/summary", false, [this](const Request& r, const std::smatch&) {
    return json(ledger().summary(query_window(r, TimeWindow::all())));
  });
  add("GET", "/v1/metrics/utilisation", false, [this](const Request& r, const std::smatch&) {
    const auto window = query_window(r, TimeWindow::ending_at(cp.now(), 7 * kDay));
    const auto m = ledger();
    return json{{"window", window}, {"utilisation", m.utilisation(window)}};
  });
  add("GET", "/v1/metrics/reproducibility", false, [this](const Request& r, const std::smatch&) {
    const auto window = query_window(r, TimeWindow::all());
    const auto m = ledger();
    return json{{"window", window}, {"rate", m.reproducibility_rate(window)}, {"reports", m.health_report_count(window)}};
  });
  add("GET", "/v1/metrics/latency", false, [this](const Request& r, const std::smatch&) {
    const auto m = ledger();
    if (auto ws = r.query.find("workspace"); ws != r.query.end()) return json(m.deployment_latency(ws->second));
    return json(m.latency_records(query_window(r, TimeWindow::all())));
  });
  add("GET", "/v1/metrics/onboarding", false, [this](const Request& r, const std::smatch&) {
    const auto m = ledger();
    if (auto who = r.query.find("researcher"); who != r.query.end()) return json(m.onboarding_time(who->second));
    return json(m.onboarding_records());
  });
  add("GET", "/v1/metrics/idle", false, [this](const Request& r, const std::smatch&) {
    const auto window = query_window(r, TimeWindow::all());
    const auto m = ledger();
    if (auto node = r.query.find("node"); node != r.query.end()) return json(m.idle_intervals(node->second, window));
    json out = json::array();
    for (const auto& n : m.sampled_nodes()) {
      for (const auto& iv : m.idle_intervals(n, window)) out.push_back(iv);
    }
    return out;
  });
  add("GET", "/v1/metrics/samples", false, [this](const Request& r, const std::smatch&) {
    const auto window = query_window(r, TimeWindow::all());
    return json(ledger().samples_for(query_string(r, "node"), window));
  });

  // -- events
  add("GET", "/v1/events", false, [this](const Request& r, const std::smatch&) {
    const auto since = static_cast<std::uint64_t>(query_number(r, "since", 0));
    const auto limit = static_cast<std::size_t>(query_number(r, "limit", 1000));
    json out = json::array();
    for (const auto& e : cp.events()) {
      if (e.sequence <= since) continue;
      if (out.size() >= limit) break;
      out.push_back(e);
    }
    return out;
  });
}

Response Service::Impl::dispatch(const Request& r) {
  if (!token.empty()) {
    auto it = r.headers.find("Authorization");
    if (it == r.headers.end() || it->second != "Bearer " + token) {
      std::shared_lock lock(mutex);
      return error_response(401, "unauthenticated", "missing or wrong bearer token", "Authorization",
                            cp.log().last_sequence());
    }
  }
  bool path_matched = false;
  for (const auto& route : routes) {
    std::smatch m;
    if (!std::regex_match(r.path, m, route.pattern)) continue;
    path_matched = true;
    if (route.method != r.method) continue;

    std::shared_lock<std::shared_mutex> read(mutex, std::defer_lock);
    std::unique_lock<std::shared_mutex> write(mutex, std::defer_lock);
    if (route.mutates) {
      write.lock();
    } else {
      read.lock();
    }
    try {
      json data = route.handler(r, m);
      // CSV export of samples.
      if (r.path == "/v1/metrics/samples" && r.query.contains("format") && r.query.at("format") == "csv") {
        std::vector<UtilSample> samples;
        for (const auto& row : data) {
          samples.push_back({row.at("node_id").get<std::string>(), row.at("timestamp").get<double>(),
                             row.at("gpu_util_percent").get<double>()});
        }
        std::ostringstream csv;
        write_trace_csv(csv, samples);
        return {200, csv.str(), "text/csv"};
      }
      return {route.method == "POST" && r.path == "/v1/workspaces" ? 201 : 200,
              json{{"sequence", cp.log().last_sequence()}, {"data", std::move(data)}}.dump()};
    } catch (const Error& e) {
      return error_response(status_for(e.code()), to_string(e.code()), e.what(), e.field(), cp.log().last_sequence());
    } catch (const json::exception& e) {
      return error_response(400, to_string(ErrorCode::kInvalidArgument), e.what(), "body", cp.log().last_sequence());
    }
  }
  std::shared_lock lock(mutex);
  if (path_matched) {
    return error_response(405, "method_not_allowed", fmt::format("{} is not supported on {}", r.method, r.path), "",
                          cp.log().last_sequence());
  }
  return error_response(404, to_string(ErrorCode::kNotFound), fmt::format("no route for {}", r.path), "path",
                        cp.log().last_sequence());
}

// ---------------------------------------------------------------------------

Service::Service(ControlPlane cp, std::string token) : impl_(std::make_unique<Impl>(std::move(cp), std::move(token))) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    Request r;
    r.method = req.method;
    r.path = req.path;
    r.body = req.body;
    for (const auto& [k, v] : req.params) r.query[k] = v;
    for (const auto& [k, v] : req.headers) r.headers[k] = v;
    auto out = handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  auto& server = impl_->server;
  server.Get(".*", handler);
  server.Post(".*", handler);
  server.Put(".*", handler);
  server.Delete(".*", handler);
}

Service::~Service() { stop(); }

std::unique_ptr<Service> Service::open(const ServiceOptions& options) {
  std::optional<ControlPlane> cp;
  if (!options.log_path.empty() && std::filesystem::exists(options.log_path)) {
    auto loaded = read_jsonl_file(options.log_path);
    if (!loaded.events.empty()) {
      cp.emplace(ControlPlane::replay(loaded.events));
      if (loaded.dropped_torn_tail) {
        std::ofstream out(options.log_path, std::ios::trunc);
        write_jsonl(out, loaded.events);
      }
    }
  }
  if (!cp) {
    if (!options.log_path.empty()) std::ofstream(options.log_path, std::ios::trunc);
    EventLog::Sink sink = options.log_path.empty() ? EventLog::Sink{} : file_sink(options.log_path);
    if (!options.scenario_path.empty()) {
      cp.emplace(build_control_plane(load_scenario(options.scenario_path), sink));
      sink = {};
    } else {
      cp.emplace(ControlPlane{});
      if (sink) {
        for (const auto& e : cp->events()) sink(e);
      }
    }
    if (sink) cp->set_event_sink(std::move(sink));
  } else if (!options.log_path.empty()) {
    cp->set_event_sink(file_sink(options.log_path));
  }
  return std::make_unique<Service>(std::move(*cp), options.token);
}

Response Service::handle(const Request& request) { return impl_->dispatch(request); }

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void Service::run() {
  // Real-time mode: follow the wall clock once per second.
  impl_->ticking = true;
  impl_->ticker = std::thread([impl = impl_.get()] {
    auto last = std::chrono::steady_clock::now();
    while (impl->ticking) {
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
      const auto now = std::chrono::steady_clock::now();
      const double dt = std::chrono::duration<double>(now - last).count();
      if (dt < 1.0) continue;
      last = now;
      std::unique_lock lock(impl->mutex);
      if (impl->cp.state().clock_mode == ClockMode::kRealTime) impl->cp.sync_to(impl->cp.now() + dt);
    }
  });
  impl_->server.listen_after_bind();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  impl_->ticking = false;
  if (impl_->ticker.joinable()) impl_->ticker.join();
}

std::uint64_t Service::sequence() const {
  std::shared_lock lock(impl_->mutex);
  return impl_->cp.log().last_sequence();
}

std::string Service::digest() const {
  std::shared_lock lock(impl_->mutex);
  return impl_->cp.digest();
}

std::vector<Event> Service::events() const {
  std::shared_lock lock(impl_->mutex);
  const auto span = impl_->cp.events();
  return {span.begin(), span.end()};
}

}  // namespace labplane::http
