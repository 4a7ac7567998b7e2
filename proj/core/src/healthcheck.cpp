#include "labplane/healthcheck.hpp"

#include <random>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {

std::string_view to_string(FaultKind kind) noexcept {
  switch (kind) {
    case FaultKind::kDriverDrift: return "DriverDrift";
    case FaultKind::kRuntimeMismatch: return "RuntimeMismatch";
    case FaultKind::kFrameworkImportError: return "FrameworkImportError";
  }
  return "?";
}

FaultKind fault_kind_from_string(std::string_view text) {
  for (auto k : {FaultKind::kDriverDrift, FaultKind::kRuntimeMismatch, FaultKind::kFrameworkImportError}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown fault kind '{}'", text), "kind");
}

double fault_draw(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 engine(seq);
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine);
}

void validate_fault(const FaultSpec& spec) {
  if (!(spec.probability >= 0.0 && spec.probability <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("fault probability {} outside [0, 1]", spec.probability), "probability");
  }
  if (spec.target.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "fault target must not be empty", "target");
  }
}

HealthOutcome evaluate_health(const Workspace& ws, const Node& node, const ImageSpec& registered,
                              std::span<const FaultState> faults, Timestamp now) {
  HealthOutcome out;
  HealthReport& r = out.report;
  r.workspace_id = ws.workspace_id;
  r.node_id = node.node_id;
  r.image_tag = registered.tag;
  r.timestamp = now;
  r.cuda_ok = cuda_compatible(registered.cuda_runtime, node.max_cuda);

  for (std::size_t i = 0; i < faults.size(); ++i) {
    const auto& fault = faults[i];
    if (fault.spec.target != node.node_id && fault.spec.target != registered.tag) continue;
    const bool tripped = fault_draw(fault.spec.seed, fault.draws) < fault.spec.probability;
    out.draws.emplace_back(i, fault.draws + 1);
    if (!tripped) continue;
    switch (fault.spec.kind) {
      case FaultKind::kDriverDrift: r.driver_ok = false; break;
      case FaultKind::kRuntimeMismatch: r.cuda_ok = false; break;
      case FaultKind::kFrameworkImportError: r.framework_ok = false; break;
    }
  }
  r.reproducible = r.driver_ok && r.cuda_ok && r.framework_ok;
  return out;
}

void to_json(nlohmann::json& j, const HealthReport& r) {
  j = nlohmann::json{{"workspace_id", r.workspace_id}, {"node_id", r.node_id},
                     {"image_tag", r.image_tag},       {"timestamp", r.timestamp},
                     {"driver_ok", r.driver_ok},       {"cuda_ok", r.cuda_ok},
                     {"framework_ok", r.framework_ok}, {"reproducible", r.reproducible}};
}

void from_json(const nlohmann::json& j, HealthReport& r) {
  r.workspace_id = j.at("workspace_id").get<std::string>();
  r.node_id = j.at("node_id").get<std::string>();
  r.image_tag = j.at("image_tag").get<std::string>();
  r.timestamp = j.at("timestamp").get<double>();
  r.driver_ok = j.at("driver_ok").get<bool>();
  r.cuda_ok = j.at("cuda_ok").get<bool>();
  r.framework_ok = j.at("framework_ok").get<bool>();
  r.reproducible = j.at("reproducible").get<bool>();
}

void to_json(nlohmann::json& j, const FaultSpec& f) {
  j = nlohmann::json{{"target", f.target},
                     {"kind", to_string(f.kind)},
                     {"probability", f.probability},
                     {"seed", f.seed}};
}

void from_json(const nlohmann::json& j, FaultSpec& f) {
  f.target = j.at("target").get<std::string>();
  f.kind = fault_kind_from_string(j.at("kind").get<std::string>());
  f.probability = j.value("probability", 1.0);
  f.seed = j.value("seed", std::uint64_t{0});
}

void to_json(nlohmann::json& j, const FaultState& f) {
  j = nlohmann::json{{"spec", f.spec}, {"draws", f.draws}};
}

void from_json(const nlohmann::json& j, FaultState& f) {
  f.spec = j.at("spec").get<FaultSpec>();
  f.draws = j.at("draws").get<std::uint64_t>();
}

}  // namespace labplane
