#include <gtest/gtest.h>

#include "labplane/metrics.hpp"
#include "labplane/scenario.hpp"
#include "support/fixtures.hpp"

namespace labplane {
namespace {

using nlohmann::json;
using testing::error_code_of;

TEST(Duration, ParsesUnitsAndConcatenations) {
  EXPECT_DOUBLE_EQ(parse_duration("90"), 90);
  EXPECT_DOUBLE_EQ(parse_duration("45s"), 45);
  EXPECT_DOUBLE_EQ(parse_duration("30m"), 1800);
  EXPECT_DOUBLE_EQ(parse_duration("12h"), 12 * kHour);
  EXPECT_DOUBLE_EQ(parse_duration("7d"), 7 * kDay);
  EXPECT_DOUBLE_EQ(parse_duration("1h30m"), 5400);
  EXPECT_DOUBLE_EQ(duration_from_json(json(120)), 120);
  EXPECT_DOUBLE_EQ(duration_from_json(json("2m")), 120);
  for (const char* bad : {"", "h", "5x", "1h-2m", "-5s"}) {
    EXPECT_THROW(parse_duration(bad), Error) << bad;
  }
}

TEST(Duration, FormatPicksLargestExactUnit) {
  EXPECT_EQ(format_duration(7 * kDay), "7d");
  EXPECT_EQ(format_duration(3 * kHour), "3h");
  EXPECT_EQ(format_duration(90 * kMinute), "90m");
  EXPECT_EQ(format_duration(18), "18s");
  for (Seconds s : {1.0, 60.0, 5400.0, 86400.0, 123.0}) EXPECT_DOUBLE_EQ(parse_duration(format_duration(s)), s);
}

json minimal() {
  return json{
      {"name", "mini"},
      {"mode", "Shared"},
      {"images", json::array({{{"tag", "img"}, {"cuda_runtime", "12.4"}, {"framework", "PyTorch"}}})},
      {"nodes", json::array({{{"node_id", "gpu-1"}, {"gpu_count", 1}}})},
      {"templates", json::array({{{"name", "t"},
                                  {"image_tag", "img"},
                                  {"resources", {{"cpu_millicores", 1000}, {"mem_bytes", 1073741824}, {"gpu_count", 1}}}}})},
      {"researchers", {"ana"}},
      {"actions", json::array({{{"at", "1m"}, {"op", "create_workspace"}, {"owner", "ana"}, {"template", "t"}, {"as", "w"}},
                               {{"at", "10m"}, {"op", "stop"}, {"workspace", "w"}}})},
      {"until", "1h"},
  };
}

TEST(Scenario, MinimalScenarioRuns) {
  const auto config = parse_scenario(minimal());
  auto cp = build_control_plane(config);
  const auto outcome = run_scenario(cp, config, config.until);
  EXPECT_EQ(outcome.failed_actions(), 0u);
  EXPECT_DOUBLE_EQ(cp.now(), kHour);
  ASSERT_EQ(outcome.actions.size(), 2u);
  const auto ws = *outcome.actions[0].workspace_id;
  EXPECT_EQ(cp.state().workspace(ws).state, WorkspaceState::kStopped);
}

TEST(Scenario, FirstUnresolvedReferenceIsNamed) {
  auto j = minimal();
  j["templates"][0]["image_tag"] = "missing";
  j["actions"][0]["owner"] = "nobody";
  try {
    parse_scenario(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    EXPECT_EQ(e.field(), "templates[0].image_tag");
  }
  j = minimal();
  j["actions"][1]["workspace"] = "ghost";
  try {
    parse_scenario(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.field(), "actions[1].workspace");
  }
  j = minimal();
  j["actions"][0]["op"] = "teleport";
  EXPECT_EQ(error_code_of([&] { parse_scenario(j); }), ErrorCode::kInvalidArgument);
}

TEST(Scenario, JsonRoundTrip) {
  const auto config = parse_scenario(minimal());
  EXPECT_EQ(parse_scenario(json(config)), config);
}

TEST(Scenario, FailingActionIsRecordedAndScriptContinues) {
  auto j = minimal();
  j["actions"].push_back({{"at", "5m"}, {"op", "restart"}, {"workspace", "w"}});
  j["actions"].push_back({{"at", "20m"}, {"op", "restart"}, {"workspace", "w"}});
  const auto config = parse_scenario(j);
  auto cp = build_control_plane(config);
  const auto outcome = run_scenario(cp, config, config.until);
  ASSERT_EQ(outcome.failed_actions(), 1u);
  const auto failed = std::find_if(outcome.actions.begin(), outcome.actions.end(), [](auto& a) { return !a.ok; });
  EXPECT_EQ(failed->error_code, "illegal_transition");
  EXPECT_EQ(cp.state().workspaces.begin()->second.state, WorkspaceState::kRunning);
}

TEST(Scenario, LoadReportsMissingFile) {
  EXPECT_EQ(error_code_of([] { load_scenario("/nonexistent/scenario.json"); }), ErrorCode::kNotFound);
}

TEST(Scenario, ShippedScenariosLoadAndDifferOnlyInMode) {
  const auto dir = std::filesystem::path(LABPLANE_SCENARIO_DIR);
  const auto baseline = load_scenario(dir / "baseline.json");
  const auto shared = load_scenario(dir / "shared.json");
  EXPECT_EQ(baseline.mode, AllocationMode::kDedicatedVM);
  EXPECT_EQ(shared.mode, AllocationMode::kShared);
  EXPECT_EQ(baseline.nodes, shared.nodes);
  EXPECT_EQ(baseline.workloads, shared.workloads);
  EXPECT_EQ(baseline.researchers.size(), 6u);
  EXPECT_EQ(shared.until, 7 * kDay);
}

TEST(Scenario, SharedBeatsDedicatedOnUtilisation) {
  const auto dir = std::filesystem::path(LABPLANE_SCENARIO_DIR);
  double util[2];
  int i = 0;
  for (const char* name : {"baseline.json", "shared.json"}) {
    const auto config = load_scenario(dir / name);
    auto cp = build_control_plane(config);
    EXPECT_EQ(run_scenario(cp, config, config.until).failed_actions(), 0u) << name;
    EXPECT_TRUE(check_invariants(cp.state()).empty());
    util[i++] = MetricsLedger::from_events(cp.events()).utilisation();
  }
  EXPECT_LT(util[0], 0.30);
  EXPECT_GE(util[1], util[0]);
}

}  // namespace
}  // namespace labplane
