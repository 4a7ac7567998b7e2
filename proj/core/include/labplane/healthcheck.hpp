#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "labplane/compat.hpp"
#include "labplane/types.hpp"
#include "labplane/workspace.hpp"

namespace labplane {

/// Result of the three-part environment probe run at every workspace start.
struct HealthReport {
  std::string workspace_id;
  std::string node_id;
  std::string image_tag;
  Timestamp timestamp = 0;
  bool driver_ok = true;     // host reports the expected driver version
  bool cuda_ok = true;       // CUDA runtime matches the tag and the host supports it
  bool framework_ok = true;  // primary framework imports without error
  bool reproducible = true;  // all three

  bool operator==(const HealthReport&) const = default;
};

enum class FaultKind { kDriverDrift, kRuntimeMismatch, kFrameworkImportError };

std::string_view to_string(FaultKind kind) noexcept;

/// Environment drift to inject. `target` is either a node_id or an image tag.
struct FaultSpec {
  std::string target;
  FaultKind kind = FaultKind::kDriverDrift;
  double probability = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const FaultSpec&) const = default;
};

/// An injected fault plus the number of draws it has consumed.
struct FaultState {
  FaultSpec spec;
  std::uint64_t draws = 0;

  bool operator==(const FaultState&) const = default;
};

/// Uniform draw in [0, 1) fully determined by (seed, index).
double fault_draw(std::uint64_t seed, std::uint64_t index);

/// Throws kInvalidArgument when probability is outside [0, 1].
void validate_fault(const FaultSpec& spec);

struct HealthOutcome {
  HealthReport report;
  // Index into the fault list -> draw counter after this check.
  std::vector<std::pair<std::size_t, std::uint64_t>> draws;
};

/// Evaluates the probe for a running workspace against modeled node and image state.
///
/// A fault applies when its target is the workspace's node or image; each
/// applicable fault consumes one draw and trips its check when the draw falls
/// below its probability. `registered` is the image as published; `node` is
/// the host's current state.
HealthOutcome evaluate_health(const Workspace& ws, const Node& node, const ImageSpec& registered,
                              std::span<const FaultState> faults, Timestamp now);

NLOHMANN_JSON_SERIALIZE_ENUM(FaultKind, {
                                            {FaultKind::kDriverDrift, "DriverDrift"},
                                            {FaultKind::kRuntimeMismatch, "RuntimeMismatch"},
                                            {FaultKind::kFrameworkImportError, "FrameworkImportError"},
                                        })

FaultKind fault_kind_from_string(std::string_view text);

void to_json(nlohmann::json& j, const HealthReport& r);
void from_json(const nlohmann::json& j, HealthReport& r);
void to_json(nlohmann::json& j, const FaultSpec& f);
void from_json(const nlohmann::json& j, FaultSpec& f);
void to_json(nlohmann::json& j, const FaultState& f);
void from_json(const nlohmann::json& j, FaultState& f);

}  // namespace labplane
