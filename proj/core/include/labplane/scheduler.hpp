#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "labplane/cluster.hpp"
#include "labplane/compat.hpp"
#include "labplane/types.hpp"

namespace labplane {

enum class AllocationMode {
  kShared,       // workspaces share the pool; nodes are reclaimed when workspaces stop
  kDedicatedVM,  // each researcher is pinned to one node for good
};

std::string_view to_string(AllocationMode mode) noexcept;
AllocationMode allocation_mode_from_string(std::string_view text);

/// Filters in the order they are applied.
enum class FilterStage { kDedicated, kTaint, kLabels, kCompatibility, kResources };

std::string_view to_string(FilterStage stage) noexcept;

struct ScheduleRequest {
  std::string workspace_id;
  std::string owner;
  ResourceSpec resources;
  ImageSpec image;
  std::map<std::string, std::string> node_selector;
};

struct ScheduleDecision {
  std::string workspace_id;
  std::optional<std::string> node_id;  // set iff assigned
  std::string reason;                  // why unschedulable; empty when assigned
  std::optional<FilterStage> blocking_filter;
  int candidates_considered = 0;
  bool cache_hit = false;

  bool assigned() const noexcept { return node_id.has_value(); }
};

/// What a placement policy may look at.
struct PlacementContext {
  const ClusterBackend& cluster;
  AllocationMode mode = AllocationMode::kShared;
  // researcher -> pinned node (DedicatedVM only)
  const std::map<std::string, std::string>& pins;
};

/// Taint toleration: GPU-requesting workloads tolerate the GPU taint, nothing tolerates any other taint.
bool tolerates(const ResourceSpec& request, const Node& node);
bool matches_selector(const std::map<std::string, std::string>& selector, const Node& node);

/// Pluggable placement strategy. Reservation is done by the caller, atomically with the decision.
class SchedulingPolicy {
 public:
  virtual ~SchedulingPolicy() = default;
  virtual std::string_view name() const noexcept = 0;
  virtual ScheduleDecision decide(const ScheduleRequest& request, const PlacementContext& ctx) const = 0;
};

/// Filters taint -> labels -> compatibility -> resource fit, then prefers a
/// node with the image cached, then the most free GPUs, then the smallest node_id.
class FirstFitPolicy final : public SchedulingPolicy {
 public:
  std::string_view name() const noexcept override { return "first-fit"; }
  ScheduleDecision decide(const ScheduleRequest& request, const PlacementContext& ctx) const override;
};

std::unique_ptr<SchedulingPolicy> make_default_policy();

NLOHMANN_JSON_SERIALIZE_ENUM(AllocationMode, {
                                                 {AllocationMode::kShared, "Shared"},
                                                 {AllocationMode::kDedicatedVM, "DedicatedVM"},
                                             })

}  // namespace labplane
