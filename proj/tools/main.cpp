// labplane: operator CLI. `simulate`, `replay` and `pipeline run` work
// without a server; the rest talk to a running `labplane serve`.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>

#include "labplane/control_plane.hpp"
#include "labplane/error.hpp"
#include "labplane/metrics.hpp"
#include "labplane/scenario.hpp"
#include "labplane/service.hpp"

namespace {

using nlohmann::json;
using namespace labplane;

struct ClientOptions {
  std::string server;
  std::string token;
  std::string user;
};

ClientOptions client_defaults() {
  ClientOptions o;
  const char* server = std::getenv("LABPLANE_SERVER");
  o.server = server && *server ? server : "http://127.0.0.1:8080";
  if (const char* token = std::getenv("LABPLANE_TOKEN")) o.token = token;
  return o;
}

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json call(const ClientOptions& o, const std::string& method, const std::string& path, const json& body = nullptr) {
  httplib::Client client(o.server);
  client.set_connection_timeout(5);
  client.set_read_timeout(60);
  httplib::Headers headers;
  if (!o.token.empty()) headers.emplace("Authorization", "Bearer " + o.token);
  if (!o.user.empty()) headers.emplace("X-Labplane-User", o.user);
  const std::string payload = body.is_null() ? "" : body.dump();
  httplib::Result res;
  if (method == "GET") {
    res = client.Get(path, headers);
  } else if (method == "POST") {
    res = client.Post(path, headers, payload, "application/json");
  } else if (method == "PUT") {
    res = client.Put(path, headers, payload, "application/json");
  } else {
    res = client.Delete(path, headers);
  }
  if (!res) throw CliError(fmt::format("cannot reach {}: {}", o.server, httplib::to_string(res.error())));
  json j = json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw CliError(fmt::format("server returned a non-JSON body (HTTP {})", res->status));
  if (j.contains("error")) {
    const auto& e = j.at("error");
    throw CliError(fmt::format("{}: {}", e.at("code").get<std::string>(), e.at("message").get<std::string>()));
  }
  return j.at("data");
}

void print_summary(const SummaryReport& report, bool as_json) {
  if (as_json) {
    std::cout << json(report).dump(2) << "\n";
  } else {
    std::cout << report.to_text();
  }
}

std::optional<Seconds> optional_duration(const std::string& text) {
  if (text.empty()) return std::nullopt;
  return parse_duration(text);
}

// -- simulate ---------------------------------------------------------------

int cmd_simulate(const std::string& path, const std::string& until, const std::string& mode,
                 const std::string& events_out, const std::string& samples_out, bool as_json) {
  auto scenario = load_scenario(path);
  if (!mode.empty()) scenario.mode = allocation_mode_from_string(mode);
  auto cp = build_control_plane(scenario);
  const auto outcome = run_scenario(cp, scenario, optional_duration(until));
  const auto ledger = MetricsLedger::from_events(cp.events());
  const auto report = ledger.summary();
  if (!events_out.empty()) {
    std::ofstream out(events_out, std::ios::trunc);
    write_jsonl(out, cp.events());
  }
  if (!samples_out.empty()) {
    std::ofstream out(samples_out, std::ios::trunc);
    write_trace_csv(out, ledger.samples());
  }
  if (as_json) {
    std::cout << json{{"scenario", scenario.name},
                      {"mode", scenario.mode},
                      {"simulated_seconds", cp.now() - scenario.config.start_time},
                      {"events", cp.log().size()},
                      {"digest", cp.digest()},
                      {"actions", outcome.actions},
                      {"summary", report}}
                     .dump(2)
              << "\n";
  } else {
    std::cout << fmt::format("scenario {} ({}), simulated {}, {} events, digest {}\n", scenario.name,
                             to_string(scenario.mode), format_duration(cp.now() - scenario.config.start_time),
                             cp.log().size(), cp.digest());
    for (const auto& a : outcome.actions) {
      if (!a.ok) std::cout << fmt::format("action {} ({}) failed: {}\n", a.index, a.op, a.message);
    }
    std::cout << report.to_text();
  }
  return 0;
}

// -- replay -----------------------------------------------------------------

int cmd_replay(const std::string& path, bool as_json) {
  const auto loaded = read_jsonl_file(path);
  const auto cp = ControlPlane::replay(loaded.events);
  const auto problems = check_invariants(cp.state());
  if (as_json) {
    std::cout << json{{"events", loaded.events.size()},
                      {"dropped_torn_tail", loaded.dropped_torn_tail},
                      {"now", cp.now()},
                      {"digest", cp.digest()},
                      {"invariant_violations", problems}}
                     .dump(2)
              << "\n";
  } else {
    std::cout << fmt::format("events: {}\n", loaded.events.size());
    if (loaded.dropped_torn_tail) std::cout << "dropped a torn final line\n";
    std::cout << fmt::format("now: {}\ndigest: {}\n", cp.now(), cp.digest());
    for (const auto& p : problems) std::cout << "invariant violated: " << p << "\n";
  }
  return problems.empty() ? 0 : 1;
}

// -- pipeline ---------------------------------------------------------------

void print_run(const PipelineRun& run) {
  for (const auto& s : run.stages) std::cout << fmt::format("  {:<12} {:7.1f} s\n", to_string(s.stage), s.duration);
  if (run.failed_stage) {
    std::cout << fmt::format("  {:<12} failed after {:.1f} s\n", to_string(*run.failed_stage),
                             run.failed_stage_elapsed);
  }
  const auto whole = std::lround(run.total);
  std::cout << fmt::format("{} run {}: {} in {:.1f} s ({}m{:02}s){}\n", run.project_name, run.run_index,
                           run.succeeded() ? "succeeded" : "failed", run.total, whole / 60, whole % 60,
                           run.total < 5 * kMinute ? ", under 5 min" : "");
}

int cmd_pipeline_run(const std::string& project, std::uint64_t run_index, const ClientOptions* remote, bool as_json) {
  PipelineRun run;
  if (remote) {
    run = call(*remote, "POST", fmt::format("/v1/pipelines/{}/runs", project)).at("run").get<PipelineRun>();
  } else {
    const auto pipelines = default_pipelines();
    auto it = pipelines.find(project);
    if (it == pipelines.end()) throw Error(ErrorCode::kNotFound, fmt::format("unknown project '{}'", project), "project");
    run = run_pipeline(it->second, run_index);
  }
  if (as_json) {
    std::cout << json(run).dump(2) << "\n";
  } else {
    print_run(run);
  }
  return run.succeeded() ? 0 : 1;
}

// -- metrics ----------------------------------------------------------------

std::optional<MetricsLedger> local_ledger(const std::string& trace, const std::string& log) {
  if (!trace.empty()) {
    std::ifstream in(trace);
    if (!in) throw CliError(fmt::format("cannot open trace '{}'", trace));
    return MetricsLedger::from_samples(read_trace_csv(in));
  }
  if (!log.empty()) return MetricsLedger::from_events(read_jsonl_file(log).events);
  return std::nullopt;
}

int cmd_metrics(const std::string& which, const ClientOptions& remote, const std::string& trace,
                const std::string& log, const std::string& workspace, bool as_json) {
  auto ledger = local_ledger(trace, log);
  if (which == "summary") {
    if (ledger) {
      print_summary(ledger->summary(), as_json);
    } else {
      auto data = call(remote, "GET", "/v1/metrics/summary");
      std::cout << data.dump(2) << "\n";
    }
  } else if (which == "utilisation") {
    double value = 0;
    if (ledger) {
      value = ledger->utilisation();
    } else {
      value = call(remote, "GET", "/v1/metrics/utilisation").at("utilisation").get<double>();
    }
    if (as_json) {
      std::cout << json{{"utilisation", value}}.dump() << "\n";
    } else {
      std::cout << fmt::format("utilisation: {:.2f}%{}\n", value * 100, value < 0.30 ? " (below 30% baseline)" : "");
    }
    if (ledger && !as_json) {
      for (const auto& node : ledger->sampled_nodes()) {
        const auto idle = ledger->idle_intervals(node);
        Seconds total = 0;
        for (const auto& iv : idle) total += iv.duration();
        std::cout << fmt::format("  {:<10} {:.2f}%  idle intervals {} ({:.1f} h)\n", node,
                                 mean_utilisation(ledger->samples_for(node)) * 100,
                                 idle.size(), total / kHour);
      }
    }
  } else {  // latency
    json records;
    if (ledger) {
      records = workspace.empty() ? json(ledger->latency_records()) : json(ledger->deployment_latency(workspace));
    } else {
      records = call(remote, "GET", workspace.empty() ? "/v1/metrics/latency" : "/v1/metrics/latency?workspace=" + workspace);
    }
    if (as_json) {
      std::cout << records.dump(2) << "\n";
    } else {
      if (!records.is_array()) records = json::array({records});
      for (const auto& r : records) {
        std::cout << fmt::format("{:<10} {:<8} {:8.1f} s\n", r.at("workspace_id").get<std::string>(),
                                 r.at("condition").get<std::string>(), r.at("duration").get<double>());
      }
    }
  }
  return 0;
}

// -- workspace --------------------------------------------------------------

int cmd_workspace(const std::string& action, const ClientOptions& remote, const std::string& id,
                  const std::string& tmpl, const std::string& owner, bool as_json) {
  json data;
  if (action == "list") {
    data = call(remote, "GET", "/v1/workspaces");
  } else if (action == "create") {
    json body{{"template", tmpl}};
    if (!owner.empty()) body["owner"] = owner;
    data = call(remote, "POST", "/v1/workspaces", body);
  } else if (action == "delete") {
    data = call(remote, "DELETE", "/v1/workspaces/" + id);
  } else {
    data = call(remote, "POST", fmt::format("/v1/workspaces/{}/{}", id, action), json::object());
  }
  if (as_json) {
    std::cout << data.dump(2) << "\n";
    return 0;
  }
  if (!data.is_array()) data = json::array({data});
  for (const auto& ws : data) {
    std::cout << fmt::format("{:<8} {:<10} {:<14} {:<10} {}\n", ws.at("workspace_id").get<std::string>(),
                             ws.at("owner").get<std::string>(), ws.at("state").get<std::string>(),
                             ws.value("node_id", json(nullptr)).is_null() ? "-" : ws.at("node_id").get<std::string>(),
                             ws.at("template_name").get<std::string>());
  }
  return 0;
}

// -- serve ------------------------------------------------------------------

http::Service* g_service = nullptr;

int cmd_serve(http::ServiceOptions options) {
  auto service = http::Service::open(options);
  const int port = service->bind(options.host, options.port);
  if (port < 0) throw CliError(fmt::format("cannot listen on {}:{}", options.host, options.port));
  std::cerr << fmt::format("labplane listening on {}:{} (sequence {}, log {})\n", options.host, port,
                           service->sequence(), options.log_path.empty() ? "in memory" : options.log_path);
  g_service = service.get();
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  service->run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"labplane: GPU workspace control plane"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "Machine-readable output");

  ClientOptions remote = client_defaults();
  auto add_remote = [&](CLI::App* cmd) {
    cmd->add_option("--server", remote.server, "Service base URL (env LABPLANE_SERVER)");
    cmd->add_option("--token", remote.token, "Bearer token (env LABPLANE_TOKEN)");
    cmd->add_option("--user", remote.user, "Act as this researcher instead of the administrator");
  };

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  http::ServiceOptions serve_opts;
  std::string listen;
  serve->add_option("--config,--scenario", serve_opts.scenario_path, "Scenario used to seed an empty log");
  serve->add_option("--listen", listen, "host:port (env LABPLANE_LISTEN)");
  serve->add_option("--log", serve_opts.log_path, "Event log path (env LABPLANE_LOG)");
  serve->add_option("--token", serve_opts.token, "Require this bearer token (env LABPLANE_TOKEN)");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run a scenario headless and print the metrics summary");
  std::string scenario_path, until, mode, events_out, samples_out;
  simulate->add_option("scenario", scenario_path, "Scenario file")->required();
  simulate->add_option("--until", until, "Simulated duration, e.g. 7d or 12h");
  simulate->add_option("--mode", mode, "Override allocation mode (Shared or DedicatedVM)");
  simulate->add_option("--events", events_out, "Write the event log here");
  simulate->add_option("--samples", samples_out, "Write the utilisation trace (CSV) here");

  // workspace
  auto* workspace = app.add_subcommand("workspace", "Manage workspaces on a running service");
  workspace->require_subcommand(1);
  std::string ws_id, ws_template, ws_owner;
  for (const char* name : {"create", "start", "stop", "rebuild", "delete", "list"}) {
    auto* sub = workspace->add_subcommand(name, fmt::format("{} workspace(s)", name));
    add_remote(sub);
    if (std::string(name) == "create") {
      sub->add_option("--template,-t", ws_template, "Template name")->required();
      sub->add_option("--owner", ws_owner, "Owner (defaults to the acting user)");
    } else if (std::string(name) != "list") {
      sub->add_option("id", ws_id, "Workspace id")->required();
    }
  }

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Query metrics from a service, an event log or a trace");
  metrics->require_subcommand(1);
  std::string trace_in, log_in, latency_ws;
  for (const char* name : {"summary", "utilisation", "latency"}) {
    auto* sub = metrics->add_subcommand(name, fmt::format("{} metric", name));
    add_remote(sub);
    sub->add_option("--trace", trace_in, "Read a utilisation trace (CSV) instead of asking the service");
    sub->add_option("--log", log_in, "Read an event log instead of asking the service");
    if (std::string(name) == "latency") sub->add_option("--workspace", latency_ws, "One workspace only");
  }

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "CI/CD pipeline model");
  pipeline->require_subcommand(1);
  auto* pipeline_run = pipeline->add_subcommand("run", "Run a project's pipeline");
  std::string project;
  std::uint64_t run_index = 0;
  bool use_server = false;
  pipeline_run->add_option("project", project, "project-a, project-b or project-c")->required();
  pipeline_run->add_option("--run-index", run_index, "Run number (selects the seeded draw)");
  pipeline_run->add_flag("--remote", use_server, "Trigger on the service instead of locally");
  add_remote(pipeline_run);

  // replay
  auto* replay = app.add_subcommand("replay", "Rebuild state from an event log and print its digest");
  std::string replay_path;
  replay->add_option("log", replay_path, "Event log (JSON lines)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      auto opts = http::apply_environment(http::ServiceOptions{});
      if (!serve_opts.scenario_path.empty()) opts.scenario_path = serve_opts.scenario_path;
      if (!serve_opts.log_path.empty()) opts.log_path = serve_opts.log_path;
      if (!serve_opts.token.empty()) opts.token = serve_opts.token;
      if (!listen.empty()) {
        const auto colon = listen.rfind(':');
        if (colon == std::string::npos) throw CliError("--listen expects host:port");
        opts.host = listen.substr(0, colon);
        opts.port = std::stoi(listen.substr(colon + 1));
      }
      return cmd_serve(opts);
    }
    if (*simulate) return cmd_simulate(scenario_path, until, mode, events_out, samples_out, as_json);
    if (*replay) return cmd_replay(replay_path, as_json);
    if (*pipeline) return cmd_pipeline_run(project, run_index, use_server ? &remote : nullptr, as_json);
    if (*metrics) {
      for (auto* sub : metrics->get_subcommands()) {
        return cmd_metrics(sub->get_name(), remote, trace_in, log_in, latency_ws, as_json);
      }
    }
    if (*workspace) {
      for (auto* sub : workspace->get_subcommands()) {
        return cmd_workspace(sub->get_name(), remote, ws_id, ws_template, ws_owner, as_json);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
