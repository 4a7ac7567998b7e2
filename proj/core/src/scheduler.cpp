#include "labplane/scheduler.hpp"

#include <algorithm>
#include <set>
#include <tuple>
#include <vector>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {

std::string_view to_string(AllocationMode mode) noexcept {
  return mode == AllocationMode::kShared ? "Shared" : "DedicatedVM";
}

AllocationMode allocation_mode_from_string(std::string_view text) {
  if (text == "Shared" || text == "shared") return AllocationMode::kShared;
  if (text == "DedicatedVM" || text == "dedicated" || text == "dedicated-vm") {
    return AllocationMode::kDedicatedVM;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown allocation mode '{}'", text), "mode");
}

std::string_view to_string(FilterStage stage) noexcept {
  switch (stage) {
    case FilterStage::kDedicated: return "dedicated";
    case FilterStage::kTaint: return "taint";
    case FilterStage::kLabels: return "labels";
    case FilterStage::kCompatibility: return "compatibility";
    case FilterStage::kResources: return "resources";
  }
  return "?";
}

bool tolerates(const ResourceSpec& request, const Node& node) {
  for (const auto& taint : node.taints) {
    const bool gpu = taint.key == kGpuTaintKey;
    if (!gpu || request.cpu_only()) return false;
  }
  return true;
}

bool matches_selector(const std::map<std::string, std::string>& selector, const Node& node) {
  for (const auto& [key, value] : selector) {
    auto it = node.labels.find(key);
    if (it == node.labels.end() || it->second != value) return false;
  }
  return true;
}

ScheduleDecision FirstFitPolicy::decide(const ScheduleRequest& request,
                                        const PlacementContext& ctx) const {
  ScheduleDecision decision;
  decision.workspace_id = request.workspace_id;

  std::vector<const Node*> survivors = ctx.cluster.nodes();
  decision.candidates_considered = static_cast<int>(survivors.size());
  if (survivors.empty()) {
    decision.reason = "no nodes registered";
    return decision;
  }

  auto filter = [&](FilterStage stage, auto&& keep, std::string why) {
    if (survivors.empty()) return;
    std::erase_if(survivors, [&](const Node* n) { return !keep(*n); });
    if (survivors.empty()) {
      decision.blocking_filter = stage;
      decision.reason = fmt::format("{}: {}", to_string(stage), why);
    }
  };

  if (ctx.mode == AllocationMode::kDedicatedVM) {
    auto pin = ctx.pins.find(request.owner);
    if (pin != ctx.pins.end()) {
      filter(FilterStage::kDedicated, [&](const Node& n) { return n.node_id == pin->second; },
             fmt::format("researcher '{}' is pinned to node '{}'", request.owner, pin->second));
    } else {
      std::set<std::string> taken;
      for (const auto& [owner, node] : ctx.pins) taken.insert(node);
      filter(FilterStage::kDedicated, [&](const Node& n) { return !taken.contains(n.node_id); },
             "every node is already dedicated to another researcher");
    }
  }
  filter(FilterStage::kTaint, [&](const Node& n) { return tolerates(request.resources, n); },
         request.resources.cpu_only() ? "CPU-only workspace does not tolerate the GPU taint"
                                      : "no node without an untolerated taint");
  filter(FilterStage::kLabels, [&](const Node& n) { return matches_selector(request.node_selector, n); },
         "no node matches the node selector");
  filter(FilterStage::kCompatibility,
         [&](const Node& n) { return check_compatibility(request.image, n).compatible; },
         fmt::format("image '{}' (CUDA {}) exceeds every candidate's maximum CUDA version",
                     request.image.tag, request.image.cuda_runtime.str()));
  filter(FilterStage::kResources, [&](const Node& n) { return request.resources.fits_within(n.free); },
         "insufficient free cpu, memory or GPU on every candidate");
  if (survivors.empty()) return decision;

  auto key = [&](const Node* n) {
    return std::make_tuple(!n->has_cached(request.image.tag), -n->free.gpu_count,
                           std::string_view(n->node_id));
  };
  const Node* best = *std::min_element(survivors.begin(), survivors.end(),
                                       [&](const Node* a, const Node* b) { return key(a) < key(b); });
  decision.node_id = best->node_id;
  decision.cache_hit = best->has_cached(request.image.tag);
  return decision;
}

std::unique_ptr<SchedulingPolicy> make_default_policy() { return std::make_unique<FirstFitPolicy>(); }

}  // namespace labplane
