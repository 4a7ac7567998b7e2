#include <gtest/gtest.h>

#include "labplane/error.hpp"
#include "labplane/healthcheck.hpp"

namespace labplane {
namespace {

struct HealthTest : ::testing::Test {
  Node node = make_node("gpu-1", 1);
  ImageSpec image = default_image_matrix()[1];
  Workspace ws;

  void SetUp() override {
    ws.workspace_id = "ws-1";
    ws.image_tag = image.tag;
    ws.node_id = node.node_id;
    ws.state = WorkspaceState::kRunning;
  }

  HealthReport check(std::vector<FaultState>& faults) {
    auto out = evaluate_health(ws, node, image, faults, 10);
    for (auto [idx, n] : out.draws) faults[idx].draws = n;
    return out.report;
  }
};

TEST_F(HealthTest, CleanEnvironmentIsReproducible) {
  std::vector<FaultState> none;
  const auto r = check(none);
  EXPECT_TRUE(r.driver_ok && r.cuda_ok && r.framework_ok && r.reproducible);
}

TEST_F(HealthTest, EachFaultTripsItsOwnCheck) {
  for (auto kind : {FaultKind::kDriverDrift, FaultKind::kRuntimeMismatch, FaultKind::kFrameworkImportError}) {
    std::vector<FaultState> faults{{FaultSpec{kind == FaultKind::kDriverDrift ? node.node_id : image.tag, kind, 1.0, 1}, 0}};
    const auto r = check(faults);
    EXPECT_EQ(r.driver_ok, kind != FaultKind::kDriverDrift);
    EXPECT_EQ(r.cuda_ok, kind != FaultKind::kRuntimeMismatch);
    EXPECT_EQ(r.framework_ok, kind != FaultKind::kFrameworkImportError);
    EXPECT_FALSE(r.reproducible);
  }
}

TEST_F(HealthTest, FaultOnOtherTargetsDoesNotApply) {
  std::vector<FaultState> faults{{FaultSpec{"gpu-9", FaultKind::kDriverDrift, 1.0, 1}, 0}};
  EXPECT_TRUE(check(faults).reproducible);
  EXPECT_EQ(faults[0].draws, 0u);
}

TEST_F(HealthTest, HostCompatibilityIsPartOfCudaCheck) {
  node.max_cuda = {12, 1};
  std::vector<FaultState> none;
  const auto r = check(none);
  EXPECT_FALSE(r.cuda_ok);
  EXPECT_FALSE(r.reproducible);
}

TEST_F(HealthTest, ReproducibleIsTheConjunction) {
  std::vector<FaultState> faults{{FaultSpec{node.node_id, FaultKind::kDriverDrift, 0.5, 3}, 0},
                                 {FaultSpec{image.tag, FaultKind::kFrameworkImportError, 0.5, 4}, 0}};
  for (int i = 0; i < 500; ++i) {
    const auto r = check(faults);
    EXPECT_EQ(r.reproducible, r.driver_ok && r.cuda_ok && r.framework_ok);
  }
  EXPECT_EQ(faults[0].draws, 500u);
}

TEST(FaultDraw, DeterministicAndUniform) {
  EXPECT_EQ(fault_draw(1, 2), fault_draw(1, 2));
  EXPECT_NE(fault_draw(1, 2), fault_draw(1, 3));
  EXPECT_NE(fault_draw(1, 2), fault_draw(2, 2));
  double sum = 0;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const double d = fault_draw(99, i);
    ASSERT_GE(d, 0.0);
    ASSERT_LT(d, 1.0);
    sum += d;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(FaultDraw, ProbabilityMustBeAFraction) {
  EXPECT_THROW(validate_fault({"n", FaultKind::kDriverDrift, 1.5, 0}), Error);
  EXPECT_THROW(validate_fault({"n", FaultKind::kDriverDrift, -0.1, 0}), Error);
  EXPECT_NO_THROW(validate_fault({"n", FaultKind::kDriverDrift, 0.0, 0}));
}

}  // namespace
}  // namespace labplane
