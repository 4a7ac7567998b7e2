// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "labplane/metrics.hpp"
#include "labplane/scenario.hpp"
#include "support/fixtures.hpp"

using namespace labplane;
using labplane::testing::kAdmin;
using labplane::testing::make_plane;

namespace {

/// Collects failures for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 20) failures.push_back(what);
    if (!ok && failures.size() == 20) failures.push_back("...");
  }
};

std::filesystem::path scenario_path(const char* name) { return std::filesystem::path(LABPLANE_SCENARIO_DIR) / name; }

ControlPlane run_shipped(const char* name) {
  const auto config = load_scenario(scenario_path(name));
  auto cp = build_control_plane(config);
  run_scenario(cp, config, config.until);
  return cp;
}

// ---------------------------------------------------------------------------
// Latency

void latency(Check& c) {
  // Scripted: one cold start, then a stop/start on the same node.
  auto cp = make_plane(1);
  const auto id = cp.create_workspace(kAdmin, "ana", "gpu").workspace_id;
  cp.advance_clock(600);
  cp.stop(kAdmin, id);
  cp.advance_clock(60);
  cp.restart(kAdmin, id);
  cp.advance_clock(60);
  const auto scripted = MetricsLedger::from_events(cp.events()).latency_records();
  c.expect(scripted.size() == 2, "scripted run should produce two starts");

  // The shipped shared-pool scenario restarts idle-stopped workspaces all week.
  auto shared = run_shipped("shared.json");
  auto records = MetricsLedger::from_events(shared.events()).latency_records();
  records.insert(records.end(), scripted.begin(), scripted.end());

  std::size_t warm = 0, cold = 0;
  for (const auto& r : records) {
    if (r.condition == LatencyCondition::kWarm) {
      ++warm;
      c.expect(std::abs(r.duration - 20) <= 5, fmt::format("warm start {} took {} s", r.workspace_id, r.duration));
    } else if (r.condition == LatencyCondition::kCold) {
      ++cold;
      c.expect(std::abs(r.duration - 300) <= 30, fmt::format("cold start {} took {} s", r.workspace_id, r.duration));
    }
  }
  c.expect(warm > 0 && cold > 0, "need both warm and cold starts");

  // Walk the raw log: between a start request and a warm Running there is no pull.
  std::size_t warm_paths = 0;
  for (auto* plane : {&cp, &shared}) {
    std::map<std::string, bool> pulled;
    for (const auto& e : plane->events()) {
      if (e.kind == event_kind::kWorkspaceCreated || e.kind == event_kind::kWorkspaceRequeued) {
        pulled[e.payload.at("workspace_id").get<std::string>()] = false;
      } else if (e.kind == event_kind::kImagePulled) {
        pulled[e.payload.at("workspace_id").get<std::string>()] = true;
      } else if (e.kind == event_kind::kWorkspaceRunning && e.payload.at("start_condition") == "Warm") {
        ++warm_paths;
        c.expect(!pulled[e.payload.at("workspace_id").get<std::string>()], "warm start went through Pulling");
      }
    }
    for (const auto& [wid, ws] : plane->state().workspaces) {
      const auto& log = ws.transition_log;
      for (std::size_t i = 1; i < log.size(); ++i) {
        if (log[i - 1].state == WorkspaceState::kPending && log[i].state == WorkspaceState::kInitializing) {
          for (std::size_t k = i + 1; k < log.size() && log[k].state != WorkspaceState::kPending; ++k) {
            c.expect(log[k].state != WorkspaceState::kPulling, "warm path entered Pulling");
          }
        }
      }
    }
  }
  c.detail = fmt::format("{} warm starts (all 20+-5 s), {} cold starts (all 300+-30 s), {} warm paths without Pulling",
                         warm, cold, warm_paths);
}

// ---------------------------------------------------------------------------
// Pipelines

void pipelines(Check& c) {
  struct Bound {
    PipelineConfig config;
    Seconds lo, hi;
  };
  const std::vector<Bound> bounds{{project_a_pipeline(), 3 * 60 + 21, 3 * 60 + 40},
                                  {project_b_pipeline(), 2 * 60 + 51, 3 * 60 + 51},
                                  {project_c_pipeline(), 4 * 60, 5 * 60}};
  constexpr int kRuns = 100;
  std::string ranges;
  for (const auto& [config, lo, hi] : bounds) {
    double mn = 1e9, mx = 0;
    for (int i = 0; i < kRuns; ++i) {
      const auto run = run_pipeline(config, static_cast<std::uint64_t>(i));
      c.expect(run.succeeded(), config.project_name + " run failed");
      c.expect(run.total >= lo && run.total <= hi,
               fmt::format("{} run {} took {:.1f} s", config.project_name, i, run.total));
      c.expect(run.total < 300, fmt::format("{} run {} not under 5 min", config.project_name, i));
      double sum = 0;
      for (const auto& s : run.stages) sum += s.duration;
      c.expect(std::abs(sum - run.total) < 1e-9, "stage durations do not add up to the total");
      mn = std::min(mn, run.total);
      mx = std::max(mx, run.total);
    }
    ranges += fmt::format(" {} [{:.1f}, {:.1f}]", config.project_name, mn, mx);

    // Fail fast: a forced failure in any validate stage leaves no build, push or deploy records.
    for (auto stage : config.stages) {
      if (!is_validate_stage(stage)) continue;
      auto failing = config;
      failing.forced_failure = stage;
      for (int i = 0; i < 10; ++i) {
        const auto run = run_pipeline(failing, static_cast<std::uint64_t>(i));
        c.expect(!run.succeeded() && run.failed_stage == stage, "forced validate failure did not fail the run");
        for (const auto& s : run.stages) {
          c.expect(is_validate_stage(s.stage),
                   fmt::format("{} recorded {} after a validate failure", config.project_name, to_string(s.stage)));
        }
      }
    }
  }
  c.detail = fmt::format("{} runs per project, all <5 min;{}; validate failures stop before build", kRuns, ranges);
}

// ---------------------------------------------------------------------------
// Reproducibility

/// Starts `starts` workspaces in rounds: 20 workspaces on 20 nodes, each
/// stopped and restarted until the total is reached.
MetricsLedger run_starts(std::size_t starts, std::optional<FaultSpec> fault) {
  constexpr int kNodes = 20;
  auto cp = make_plane(kNodes);
  if (fault) cp.inject_fault(*fault);
  std::vector<std::string> ids;
  for (int i = 0; i < kNodes; ++i) ids.push_back(cp.create_workspace(kAdmin, fmt::format("r{}", i), "gpu").workspace_id);
  std::size_t done = ids.size();
  cp.advance_clock(300);
  while (done < starts) {
    for (const auto& id : ids) cp.stop(kAdmin, id);
    for (const auto& id : ids) {
      if (done == starts) break;
      cp.restart(kAdmin, id);
      ++done;
    }
    cp.advance_clock(18);
  }
  return MetricsLedger::from_events(cp.events());
}

/// Smallest k with P(X <= k) >= q for X ~ Binomial(n, p).
std::size_t binomial_quantile(std::size_t n, double p, double q) {
  double cdf = 0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double log_pmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                           k * std::log(p) + (n - k) * std::log1p(-p);
    cdf += std::exp(log_pmf);
    if (cdf >= q) return k;
  }
  return n;
}

void reproducibility(Check& c) {
  const auto clean = run_starts(1000, std::nullopt);
  c.expect(clean.health_report_count() == 1000, fmt::format("expected 1000 reports, got {}", clean.health_report_count()));
  const double clean_rate = clean.reproducibility_rate();
  c.expect(clean_rate == 1.0, fmt::format("zero-fault rate {}", clean_rate));

  constexpr std::size_t kStarts = 10000;
  constexpr std::uint64_t kSeed = 20260317;
  const auto faulty = run_starts(kStarts, FaultSpec{"pytorch-2x-cu124", FaultKind::kFrameworkImportError, 0.05, kSeed});
  c.expect(faulty.health_report_count() == kStarts, "expected one report per start");
  const double rate = faulty.reproducibility_rate();

  std::size_t tripped = 0;
  for (std::uint64_t i = 0; i < kStarts; ++i) tripped += fault_draw(kSeed, i) < 0.05 ? 1 : 0;
  const double recount = 1.0 - static_cast<double>(tripped) / kStarts;
  c.expect(rate == recount, fmt::format("rate {} differs from recount {}", rate, recount));

  const auto lo = binomial_quantile(kStarts, 0.95, 0.005);
  const auto hi = binomial_quantile(kStarts, 0.95, 0.995);
  const auto passes = static_cast<std::size_t>(std::llround(rate * kStarts));
  c.expect(passes >= lo && passes <= hi, fmt::format("{} passes outside [{}, {}]", passes, lo, hi));
  c.detail = fmt::format("zero-fault rate {:.4f} over 1000 starts; p=0.05 rate {:.4f} over {} starts "
                         "(recount {:.4f}, 99% interval [{:.4f}, {:.4f}])",
                         clean_rate, rate, kStarts, recount, double(lo) / kStarts, double(hi) / kStarts);
}

// ---------------------------------------------------------------------------
// Utilisation

/// Every window [i, j) of >= 30 idle samples that cannot be extended on either side.
std::vector<std::pair<std::size_t, std::size_t>> all_windows(const std::vector<double>& v) {
  std::vector<std::size_t> prefix(v.size() + 1, 0);
  for (std::size_t i = 0; i < v.size(); ++i) prefix[i + 1] = prefix[i] + (v[i] < 5.0 ? 1 : 0);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = i + 30; j <= v.size(); ++j) {
      if (prefix[j] - prefix[i] != j - i) break;
      const bool left = i == 0 || v[i - 1] >= 5.0;
      const bool right = j == v.size() || v[j] >= 5.0;
      if (left && right) out.emplace_back(i, j);
    }
  }
  return out;
}

void utilisation(Check& c) {
  auto dedicated = run_shipped("baseline.json");
  auto shared = run_shipped("shared.json");
  c.expect(dedicated.state().mode == AllocationMode::kDedicatedVM, "baseline scenario is not DedicatedVM");
  c.expect(shared.state().mode == AllocationMode::kShared, "shared scenario is not Shared");
  c.expect(dedicated.state().runner.submissions == shared.state().runner.submissions,
           "the two modes did not replay the identical workload");
  c.expect(dedicated.now() == 7 * kDay && shared.now() == 7 * kDay, "both runs cover 7 simulated days");
  const double u_dedicated = MetricsLedger::from_events(dedicated.events()).utilisation();
  const double u_shared = MetricsLedger::from_events(shared.events()).utilisation();
  c.expect(u_dedicated < 0.30, fmt::format("DedicatedVM utilisation {:.4f} not below 30%", u_dedicated));
  c.expect(u_shared >= u_dedicated, fmt::format("Shared {:.4f} below DedicatedVM {:.4f}", u_shared, u_dedicated));

  std::mt19937_64 rng(10080);
  std::size_t intervals = 0;
  for (int t = 0; t < 10; ++t) {
    std::vector<double> v;
    std::bernoulli_distribution idle_regime(0.5);
    while (v.size() < 10080) {
      const bool idle = idle_regime(rng);
      const auto len = std::geometric_distribution<std::size_t>(idle ? 1.0 / 40 : 1.0 / 60)(rng) + 1;
      for (std::size_t k = 0; k < len && v.size() < 10080; ++k) {
        double x = idle ? std::uniform_real_distribution<double>(0, 5)(rng)
                        : std::uniform_real_distribution<double>(5, 100)(rng);
        // Exact threshold values are busy.
        if (std::bernoulli_distribution(0.01)(rng)) x = 5.0;
        v.push_back(x);
      }
    }
    std::vector<UtilSample> samples;
    const Timestamp epoch = 1'700'000'000 + t * kDay;
    for (std::size_t i = 0; i < v.size(); ++i) samples.push_back({"gpu-1", epoch + i * kMinute, v[i]});
    std::shuffle(samples.begin(), samples.end(), rng);

    const auto found = find_idle_intervals(samples);
    const auto expected = all_windows(v);
    c.expect(found.size() == expected.size(),
             fmt::format("trace {}: {} intervals, scan found {}", t, found.size(), expected.size()));
    for (std::size_t i = 0; i < std::min(found.size(), expected.size()); ++i) {
      c.expect(found[i].start == epoch + expected[i].first * kMinute &&
                   found[i].end == epoch + expected[i].second * kMinute,
               fmt::format("trace {} interval {} differs", t, i));
    }
    intervals += expected.size();
  }
  c.detail = fmt::format("7 d DedicatedVM {:.2f}% (<30%, calibrated profile), Shared {:.2f}%; "
                         "idle intervals match the window scan on 10 x 10080 samples ({} intervals)",
                         u_dedicated * 100, u_shared * 100, intervals);
}

// ---------------------------------------------------------------------------
// Compatibility

void compatibility(Check& c) {
  ControlPlane cp;
  for (const auto& image : default_image_matrix()) cp.register_image(image);
  auto node = make_node("gpu-1", 3);
  node.max_cuda = {13, 0};
  cp.register_node(node);
  std::vector<std::string> tags;
  std::map<std::string, std::string> ws_for_tag;
  for (const auto& image : default_image_matrix()) {
    tags.push_back(image.tag);
    const auto report = cp.check_compatibility(image.tag, "gpu-1");
    c.expect(report.compatible, image.tag + " incompatible with a 13.0 host");
    cp.save_template(labplane::testing::gpu_template("t-" + image.tag, image.tag));
    ws_for_tag[image.tag] = cp.create_workspace(kAdmin, "ana", "t-" + image.tag).workspace_id;
  }
  cp.advance_clock(300);
  for (const auto& [tag, id] : ws_for_tag) c.expect(cp.state().workspace(id).state == WorkspaceState::kRunning, id);

  const auto report = cp.update_host_driver("gpu-1", "530.30.02", {12, 1});
  const std::vector<std::string> expected{"pytorch-2x-cu124", "pytorch-2x-cu130"};
  c.expect(report.newly_incompatible == expected, "downgrade flagged the wrong tags");
  std::vector<std::string> flagged;
  for (const auto& [tag, id] : ws_for_tag) {
    const auto& ws = cp.state().workspace(id);
    if (ws.compat_flagged) flagged.push_back(tag);
    c.expect(ws.state == WorkspaceState::kRunning, "flagged workspace was stopped");
  }
  c.expect(flagged == expected, "wrong running workspaces flagged");
  c.expect(cp.state().images.tags() == tags, "a tag was removed by the downgrade");
  for (const auto& tag : tags) {
    const bool ok = cp.check_compatibility(tag, "gpu-1").compatible;
    c.expect(ok == (tag == "pytorch-2x-cu121"), tag + " has the wrong post-downgrade verdict");
  }
  c.detail = fmt::format("3/3 tags pass on CUDA 13.0; after 12.1 downgrade flagged [{}], {} tags still registered",
                         fmt::join(report.newly_incompatible, ", "), cp.state().images.size());
}

// ---------------------------------------------------------------------------
// FSM and scheduler properties

// Lifecycle edges, written out independently of the library table.
bool edge_allowed(WorkspaceState from, WorkspaceState to) {
  using S = WorkspaceState;
  static const std::set<std::pair<S, S>> edges{
      {S::kPending, S::kPulling},      {S::kPending, S::kInitializing}, {S::kPending, S::kFailed},
      {S::kPulling, S::kInitializing}, {S::kPulling, S::kFailed},       {S::kInitializing, S::kRunning},
      {S::kInitializing, S::kFailed},  {S::kRunning, S::kStopped},      {S::kRunning, S::kFailed},
      {S::kStopped, S::kPending},      {S::kStopped, S::kDeleted},      {S::kFailed, S::kPending},
      {S::kFailed, S::kDeleted},
  };
  return edges.contains({from, to});
}

struct OracleStats {
  std::size_t decisions = 0;
  std::size_t mismatches = 0;
  std::string first_mismatch;
};

/// Runs the production policy and compares it with a brute-force pass over every node.
class OracleCheckedPolicy final : public SchedulingPolicy {
 public:
  explicit OracleCheckedPolicy(OracleStats* stats) : stats_(stats) {}
  std::string_view name() const noexcept override { return inner_.name(); }

  ScheduleDecision decide(const ScheduleRequest& request, const PlacementContext& ctx) const override {
    auto decision = inner_.decide(request, ctx);
    ++stats_->decisions;

    std::set<std::string> taken;
    for (const auto& [owner, node] : ctx.pins) taken.insert(node);
    const auto pin = ctx.pins.find(request.owner);
    const Node* best = nullptr;
    for (const Node* n : ctx.cluster.nodes()) {
      if (ctx.mode == AllocationMode::kDedicatedVM) {
        if (pin != ctx.pins.end() ? n->node_id != pin->second : taken.contains(n->node_id)) continue;
      }
      bool taint_ok = true;
      for (const auto& t : n->taints) {
        if (!(t.key == "nvidia.com/gpu" && request.resources.gpu_count > 0)) taint_ok = false;
      }
      if (!taint_ok) continue;
      bool labels_ok = true;
      for (const auto& [k, v] : request.node_selector) {
        labels_ok = labels_ok && n->labels.contains(k) && n->labels.at(k) == v;
      }
      if (!labels_ok) continue;
      if (std::make_pair(request.image.cuda_runtime.major, request.image.cuda_runtime.minor) >
          std::make_pair(n->max_cuda.major, n->max_cuda.minor)) {
        continue;
      }
      if (request.resources.cpu_millicores > n->free.cpu_millicores || request.resources.mem_bytes > n->free.mem_bytes ||
          request.resources.gpu_count > n->free.gpu_count) {
        continue;
      }
      auto score = [&](const Node* x) {
        const bool cached = std::find(x->image_cache.begin(), x->image_cache.end(), request.image.tag) !=
                            x->image_cache.end();
        return std::make_tuple(cached ? 0 : 1, -x->free.gpu_count, x->node_id);
      };
      if (best == nullptr || score(n) < score(best)) best = n;
    }
    const std::optional<std::string> expected = best ? std::optional(best->node_id) : std::nullopt;
    if (expected != decision.node_id) {
      if (stats_->mismatches++ == 0) {
        stats_->first_mismatch = fmt::format("{}: policy {} vs oracle {}", request.workspace_id,
                                             decision.node_id.value_or("-"), expected.value_or("-"));
      }
    }
    return decision;
  }

 private:
  FirstFitPolicy inner_;
  OracleStats* stats_;
};

struct Violations {
  std::size_t illegal = 0;
  std::size_t taint = 0;
  std::size_t accounting = 0;
  std::size_t conservation = 0;
  std::size_t silent_failures = 0;
  std::string first;

  void note(std::size_t& counter, const std::string& what) {
    if (counter++ == 0 && first.empty()) first = what;
  }
};

void check_state(const ClusterState& s, Violations& v) {
  std::map<std::string, ResourceSpec> held;
  for (const auto& [id, ws] : s.workspaces) {
    const auto& log = ws.transition_log;
    for (std::size_t i = 1; i < log.size(); ++i) {
      if (!edge_allowed(log[i - 1].state, log[i].state)) {
        v.note(v.illegal, fmt::format("{}: {} -> {}", id, to_string(log[i - 1].state), to_string(log[i].state)));
      }
    }
    const bool holds = ws.state == WorkspaceState::kPulling || ws.state == WorkspaceState::kInitializing ||
                       ws.state == WorkspaceState::kRunning;
    if (!holds) continue;
    const Node* node = ws.node_id ? s.cluster.find(*ws.node_id) : nullptr;
    if (node == nullptr) {
      v.note(v.accounting, id + " holds no known node");
      continue;
    }
    held[node->node_id] += ws.resources;
    const bool tainted = std::any_of(node->taints.begin(), node->taints.end(),
                                     [](const Taint& t) { return t.key == "nvidia.com/gpu"; });
    if (ws.resources.gpu_count == 0 && tainted) v.note(v.taint, id + " is CPU-only on " + node->node_id);
  }
  for (const auto& [id, node] : s.cluster.node_map()) {
    const ResourceSpec used{node.cpu_capacity - node.free.cpu_millicores, node.mem_capacity - node.free.mem_bytes,
                            node.gpu_count - node.free.gpu_count};
    if (!(used == held[id])) v.note(v.accounting, "reservations on " + id + " do not match holders");
  }
}

void fsm_and_scheduler(Check& c) {
  constexpr int kSequences = 10000;
  OracleStats stats;
  Violations v;
  std::size_t ops = 0, rejected = 0;
  std::mt19937_64 rng(6);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  const auto images = default_image_matrix();
  const std::vector<CudaVersion> cuda{{12, 1}, {12, 4}, {13, 0}};
  const std::vector<std::string> owners{"ana", "ben", "chen"};

  for (int seq = 0; seq < kSequences; ++seq) {
    ControlConfig config;
    config.pipelines.clear();
    ControlPlane cp(config, std::make_unique<OracleCheckedPolicy>(&stats));
    for (const auto& image : images) cp.register_image(image);
    int node_counter = 0;
    auto random_node = [&] {
      auto n = make_node(fmt::format("n{}", ++node_counter), static_cast<std::int64_t>(pick(3)));
      n.cpu_capacity = std::vector<std::int64_t>{4000, 8000, 16000}[pick(3)];
      n.mem_capacity = std::vector<std::int64_t>{8, 16, 64}[pick(3)] * kGiB;
      n.free = n.capacity();
      n.max_cuda = cuda[pick(3)];
      if (chance(0.5)) n.labels["zone"] = chance(0.5) ? "a" : "b";
      for (const auto& image : images) {
        if (chance(0.3)) n.image_cache.push_back(image.tag);
      }
      return n;
    };
    std::map<std::string, ResourceSpec> capacity;
    const auto nodes = 1 + pick(5);
    for (std::size_t i = 0; i < nodes; ++i) {
      auto n = random_node();
      capacity[n.node_id] = n.capacity();
      cp.register_node(n);
    }
    std::vector<std::string> templates;
    for (int t = 0; t < 3; ++t) {
      Template tmpl{fmt::format("t{}", t), images[pick(3)].tag,
                    ResourceSpec{static_cast<std::int64_t>(1000 * (1 + pick(8))),
                                 static_cast<std::int64_t>(1 + pick(32)) * kGiB, static_cast<std::int64_t>(pick(3))},
                    {"/home"}, {}, 0};
      if (chance(0.2)) tmpl.node_selector["zone"] = "a";
      templates.push_back(cp.save_template(tmpl).name);
    }
    if (chance(0.3)) cp.set_allocation_mode(AllocationMode::kDedicatedVM);

    auto workspace_ids = [&] {
      std::vector<std::string> ids;
      for (const auto& [id, ws] : cp.state().workspaces) ids.push_back(id);
      return ids;
    };
    const auto length = 10 + pick(30);
    for (std::size_t step = 0; step < length; ++step) {
      ++ops;
      const auto ids = workspace_ids();
      const std::string ws = ids.empty() ? "ws-0" : ids[pick(ids.size())];
      const Actor actor = chance(0.9) ? kAdmin : Actor{owners[pick(owners.size())], false};
      const auto before = cp.log().last_sequence();
      try {
        switch (pick(12)) {
          case 0:
          case 1: cp.create_workspace(kAdmin, owners[pick(owners.size())], templates[pick(templates.size())]); break;
          case 2: cp.stop(actor, ws); break;
          case 3: cp.restart(actor, ws); break;
          case 4: cp.rebuild(actor, ws); break;
          case 5: cp.remove(actor, ws); break;
          case 6: cp.release(ws); break;
          case 7:
          case 8: cp.advance_clock(static_cast<double>(1 + pick(400))); break;
          case 9: {
            const auto& all = cp.state().cluster.node_map();
            if (all.empty()) break;
            auto it = std::next(all.begin(), static_cast<long>(pick(all.size())));
            cp.update_host_driver(it->first, "drv", cuda[pick(3)]);
            break;
          }
          case 10: {
            const auto& all = cp.state().cluster.node_map();
            if (chance(0.5) && all.size() > 1) {
              cp.deregister_node(std::next(all.begin(), static_cast<long>(pick(all.size())))->first);
            } else if (all.size() < 5) {
              auto n = random_node();
              capacity[n.node_id] = n.capacity();
              cp.register_node(n);
            }
            break;
          }
          case 11: cp.run_job(ws, static_cast<double>(60 + pick(600)), static_cast<double>(pick(101)), 0); break;
        }
      } catch (const Error&) {
        ++rejected;
        if (cp.log().last_sequence() != before) v.note(v.silent_failures, "a rejected command emitted events");
      }
      check_state(cp.state(), v);
    }

    // Teardown: fail every holder, then delete everything that can be deleted.
    for (int round = 0; round < 50; ++round) {
      bool any = false;
      for (const auto& [id, ws] : cp.state().workspaces) {
        if (ws.node_id) {
          cp.release(id);
          any = true;
          break;
        }
      }
      if (!any) break;
    }
    for (const auto& id : workspace_ids()) {
      const auto state = cp.state().workspace(id).state;
      if (state == WorkspaceState::kStopped || state == WorkspaceState::kFailed) cp.remove(kAdmin, id);
    }
    check_state(cp.state(), v);
    for (const auto& [id, node] : cp.state().cluster.node_map()) {
      if (!(node.free == capacity.at(id)) || !(node.capacity() == capacity.at(id))) {
        v.note(v.conservation, fmt::format("sequence {}: {} not fully free after teardown", seq, id));
      }
    }
  }
  c.expect(v.illegal == 0, fmt::format("{} illegal transitions ({})", v.illegal, v.first));
  c.expect(v.taint == 0, fmt::format("{} taint violations ({})", v.taint, v.first));
  c.expect(v.accounting == 0, fmt::format("{} accounting mismatches ({})", v.accounting, v.first));
  c.expect(v.conservation == 0, fmt::format("{} conservation failures ({})", v.conservation, v.first));
  c.expect(v.silent_failures == 0, fmt::format("{} rejected commands left events", v.silent_failures));
  c.expect(stats.mismatches == 0, fmt::format("{} scheduler/oracle mismatches ({})", stats.mismatches, stats.first_mismatch));
  c.detail = fmt::format("{} sequences, {} operations ({} rejected), {} scheduling decisions checked against the oracle",
                         kSequences, ops, rejected, stats.decisions);
}

// ---------------------------------------------------------------------------
// Event sourcing

void event_sourcing(Check& c) {
  constexpr int kScenarios = 100;
  std::mt19937_64 rng(7);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::size_t total_events = 0, truncations = 0, full_replays = 0, mismatches = 0, invalid = 0;
  std::string first;
  const std::vector<std::string> owners{"ana", "ben", "chen", "dara"};

  for (int sc = 0; sc < kScenarios; ++sc) {
    ControlConfig config;
    config.start_time = static_cast<double>(pick(1000));
    config.fail_on_unhealthy = pick(2) == 0;
    auto cp = make_plane(1 + static_cast<int>(pick(3)), static_cast<int>(pick(2)), config);
    if (pick(2) == 0) cp.set_allocation_mode(AllocationMode::kDedicatedVM);
    std::vector<std::string> live{cp.digest()};
    const std::size_t seeded = cp.log().size();
    // Digest of the live state right after each later event.
    std::vector<std::string> after;
    cp.set_event_sink([&](const Event&) { after.push_back(cp.digest()); });

    if (pick(2) == 0) {
      auto profile = default_workload_profile();
      profile.seed = rng();
      profile.burst_duration_mean = kHour;
      profile.gap_duration_mean = 2 * kHour;
      cp.attach_workload(profile, {owners[0], owners[1]}, "gpu", 12 * kHour);
    }
    const auto steps = 10 + pick(20);
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<std::string> ids;
      for (const auto& [id, ws] : cp.state().workspaces) ids.push_back(id);
      const std::string ws = ids.empty() ? "ws-0" : ids[pick(ids.size())];
      try {
        switch (pick(11)) {
          case 0: cp.create_workspace(kAdmin, owners[pick(owners.size())], pick(3) == 0 ? "cpu" : "gpu"); break;
          case 1: cp.stop(kAdmin, ws); break;
          case 2: cp.restart(kAdmin, ws); break;
          case 3: cp.rebuild(kAdmin, ws); break;
          case 4: cp.remove(kAdmin, ws); break;
          case 5: cp.release(ws); break;
          case 6: cp.run_job(ws, 60.0 * (1 + pick(30)), static_cast<double>(pick(101)), static_cast<int>(pick(2))); break;
          case 7: cp.inject_fault({"gpu-1", static_cast<FaultKind>(pick(3)), 0.5, rng()}); break;
          case 8: cp.trigger_pipeline(std::vector<std::string>{"project-a", "project-b", "project-c"}[pick(3)]); break;
          case 9: cp.set_assisted(owners[pick(owners.size())], pick(2) == 0); break;
          default: cp.advance_clock(60.0 * (1 + pick(60))); break;
        }
      } catch (const Error&) {
      }
    }
    cp.advance_clock(kHour);
    cp.set_event_sink({});

    const std::vector<Event> events(cp.events().begin(), cp.events().end());
    total_events += events.size();
    // Digests for the first `seeded` events were not observed live; only the last one is known.
    std::vector<std::optional<std::string>> expected(events.size());
    expected[seeded - 1] = live.front();
    for (std::size_t i = 0; i < after.size(); ++i) expected[seeded + i] = after[i];

    // Every truncation: fold the prefix into a fresh state.
    ClusterState folded;
    for (std::size_t k = 0; k < events.size(); ++k) {
      try {
        apply_event(folded, events[k]);
      } catch (const Error& e) {
        ++invalid;
        if (first.empty()) first = fmt::format("scenario {} event {}: {}", sc, k + 1, e.what());
        break;
      }
      ++truncations;
      if (!check_invariants(folded).empty()) {
        ++invalid;
        if (first.empty()) first = fmt::format("scenario {} prefix {}: {}", sc, k + 1, check_invariants(folded).front());
      }
      if (expected[k] && state_digest(folded) != *expected[k]) {
        ++mismatches;
        if (first.empty()) first = fmt::format("scenario {} prefix {}: digest differs", sc, k + 1);
      }
    }
    // Full control-plane replays at a few cut points, plus the serialized log.
    for (std::size_t cut : {std::size_t{1}, events.size() / 3, events.size() / 2, events.size()}) {
      if (cut == 0 || !expected[cut - 1]) continue;
      const auto replayed = ControlPlane::replay(std::span(events).first(cut));
      ++full_replays;
      if (replayed.digest() != *expected[cut - 1]) {
        ++mismatches;
        if (first.empty()) first = fmt::format("scenario {} replay at {}: digest differs", sc, cut);
      }
    }
    std::stringstream buf;
    write_jsonl(buf, events);
    const auto loaded = read_jsonl(buf);
    if (ControlPlane::replay(loaded.events).digest() != cp.digest()) {
      ++mismatches;
      if (first.empty()) first = fmt::format("scenario {}: JSONL round trip changes the digest", sc);
    }
  }
  c.expect(mismatches == 0, fmt::format("{} digest mismatches ({})", mismatches, first));
  c.expect(invalid == 0, fmt::format("{} invalid prefixes ({})", invalid, first));
  c.detail = fmt::format("{} scenarios, {} events, {} truncations folded and validated, {} full replays",
                         kScenarios, total_events, truncations, full_replays);
}

// ---------------------------------------------------------------------------
// Onboarding

void onboarding(Check& c) {
  std::mt19937_64 rng(8);
  std::size_t scripts = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto cp = make_plane(3);
    const std::vector<std::string> who{"ana", "ben", "chen"};
    std::map<std::string, Timestamp> first_ws;
    std::map<std::string, std::optional<Timestamp>> first_ok;
    std::map<std::string, bool> assisted;
    std::map<std::string, std::string> ws_of;
    std::uniform_int_distribution<int> failures(0, 4);

    for (const auto& r : who) {
      assisted[r] = std::bernoulli_distribution(0.5)(rng);
      if (assisted[r] || trial % 2 == 0) cp.set_assisted(r, assisted[r]);
    }
    for (const auto& r : who) {
      cp.advance_clock(std::uniform_real_distribution<double>(1, 600)(rng));
      first_ws[r] = cp.now();
      ws_of[r] = cp.create_workspace(kAdmin, r, "gpu").workspace_id;
    }
    cp.advance_clock(1200);
    for (const auto& r : who) {
      if (cp.state().workspace(ws_of[r]).state != WorkspaceState::kRunning) continue;
      const int fails = failures(rng);
      for (int k = 0; k < fails; ++k) {
        cp.run_job(ws_of[r], 120, 50, 1);
        cp.advance_clock(120);
      }
      // A killed job does not count as a success either.
      if (trial % 5 == 0) {
        cp.run_job(ws_of[r], 600, 50, 0);
        cp.advance_clock(60);
        cp.stop(kAdmin, ws_of[r]);
        cp.restart(kAdmin, ws_of[r]);
        cp.advance_clock(60);
      }
      const bool succeed = r != "chen" || trial % 3 != 0;
      if (succeed) {
        const auto d = std::uniform_real_distribution<double>(60, 900)(rng);
        cp.run_job(ws_of[r], d, 50, 0);
        first_ok[r] = cp.now() + d;
        cp.advance_clock(d);
        cp.run_job(ws_of[r], 60, 50, 0);  // later successes change nothing
        cp.advance_clock(120);
      }
    }
    const auto ledger = MetricsLedger::from_events(cp.events());
    std::size_t expect_assisted = 0, expect_pending = 0;
    for (const auto& r : who) {
      ++scripts;
      const auto rec = ledger.onboarding_time(r);
      c.expect(rec.first_workspace_at == first_ws[r], r + ": wrong onboarding start");
      c.expect(rec.first_success_at == first_ok[r],
               fmt::format("trial {} {}: onboarding ended at {} not {}", trial, r,
                           rec.first_success_at.value_or(-1), first_ok[r].value_or(-1)));
      c.expect(rec.assisted == assisted[r], r + ": assisted flag lost");
      expect_assisted += assisted[r] ? 1 : 0;
      expect_pending += first_ok[r] ? 0 : 1;
    }
    const auto summary = ledger.summary();
    c.expect(summary.assisted_onboardings == expect_assisted, "summary assisted count is wrong");
    c.expect(summary.pending_onboardings == expect_pending, "summary pending count is wrong");
    const auto j = nlohmann::json(summary);
    c.expect(j["assisted_onboardings"] == expect_assisted, "assisted count missing from the summary JSON");
  }
  c.detail = fmt::format("{} researcher scripts: failed and killed jobs keep the clock running, the first exit-0 "
                         "job stops it, assisted flags reach the summary",
                         scripts);
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria{
      {"latency", latency},
      {"pipeline-bounds", pipelines},
      {"reproducibility", reproducibility},
      {"utilisation", utilisation},
      {"compatibility", compatibility},
      {"fsm-scheduler-properties", fsm_and_scheduler},
      {"event-sourcing", event_sourcing},
      {"onboarding", onboarding},
  };
  int failed = 0;
  for (const auto& criterion : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.run(check);
    } catch (const std::exception& e) {
      check.failures.push_back(std::string("unexpected exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (check.failures.empty()) {
      fmt::print("PASS {} ({:.1f} s): {}\n", criterion.name, secs, check.detail);
    } else {
      ++failed;
      fmt::print("FAIL {} ({:.1f} s): {}\n", criterion.name, secs, fmt::join(check.failures, "; "));
    }
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
