#include "labplane/types.hpp"

#include <algorithm>
#include <charconv>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {
namespace {

std::uint32_t parse_component(std::string_view text, std::string_view whole) {
  std::uint32_t value = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc{} || ptr != last) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("malformed CUDA version '{}'", whole),
                "max_cuda");
  }
  return value;
}

}  // namespace

CudaVersion CudaVersion::parse(std::string_view text) {
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) {
    return {parse_component(text, text), 0};
  }
  return {parse_component(text.substr(0, dot), text), parse_component(text.substr(dot + 1), text)};
}

std::string CudaVersion::str() const { return fmt::format("{}.{}", major, minor); }

Ordering compare_cuda(const CudaVersion& a, const CudaVersion& b) noexcept {
  const auto order = a <=> b;
  if (order < 0) return Ordering::kLess;
  if (order > 0) return Ordering::kGreater;
  return Ordering::kEqual;
}

bool Node::has_gpu_taint() const { return taints.contains(gpu_taint()); }

bool Node::has_cached(std::string_view tag) const {
  return std::find(image_cache.begin(), image_cache.end(), tag) != image_cache.end();
}

Node make_node(std::string node_id, std::int64_t gpu_count) {
  Node node;
  node.node_id = std::move(node_id);
  node.gpu_count = gpu_count;
  node.labels["kubernetes.io/hostname"] = node.node_id;
  if (gpu_count > 0) {
    node.labels["nvidia.com/gpu.product"] = node.gpu_model;
    node.taints.insert(gpu_taint());
  } else {
    node.gpu_model.clear();
  }
  node.free = node.capacity();
  return node;
}

void validate_node(const Node& node) {
  if (node.node_id.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "node_id must not be empty", "node_id");
  }
  if (node.gpu_count < 0) {
    throw Error(ErrorCode::kInvalidArgument, "gpu_count must be non-negative", "gpu_count");
  }
  if (node.cpu_capacity <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "cpu_capacity must be positive", "cpu_capacity");
  }
  if (node.mem_capacity <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "mem_capacity must be positive", "mem_capacity");
  }
  const auto cap = node.capacity();
  const auto& f = node.free;
  if (f.cpu_millicores < 0 || f.mem_bytes < 0 || f.gpu_count < 0 || !f.fits_within(cap)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("free resources of node '{}' outside [0, capacity]", node.node_id),
                "free");
  }
  if (node.gpu_count == 0 && node.has_gpu_taint()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("CPU-only node '{}' must not carry the GPU taint", node.node_id),
                "taints");
  }
  if (node.gpu_count > 0 && !node.has_gpu_taint()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("GPU node '{}' must carry the GPU taint", node.node_id), "taints");
  }
}

void to_json(nlohmann::json& j, const CudaVersion& v) { j = v.str(); }

void from_json(const nlohmann::json& j, CudaVersion& v) {
  if (j.is_number()) {
    // Tolerate `13.0` written as a JSON number in hand-edited configs.
    v = CudaVersion::parse(fmt::format("{:.1f}", j.get<double>()));
  } else {
    v = CudaVersion::parse(j.get<std::string>());
  }
}

void to_json(nlohmann::json& j, const Taint& t) {
  j = nlohmann::json{{"key", t.key}, {"effect", "NoSchedule"}};
}

void from_json(const nlohmann::json& j, Taint& t) {
  t.key = j.at("key").get<std::string>();
  const auto effect = j.value("effect", std::string("NoSchedule"));
  if (effect != "NoSchedule") {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unsupported taint effect '{}'", effect),
                "taints");
  }
  t.effect = TaintEffect::kNoSchedule;
}

void to_json(nlohmann::json& j, const ResourceSpec& r) {
  j = nlohmann::json{{"cpu_millicores", r.cpu_millicores},
                     {"mem_bytes", r.mem_bytes},
                     {"gpu_count", r.gpu_count}};
}

void from_json(const nlohmann::json& j, ResourceSpec& r) {
  r.cpu_millicores = j.value("cpu_millicores", std::int64_t{0});
  r.mem_bytes = j.value("mem_bytes", std::int64_t{0});
  r.gpu_count = j.value("gpu_count", std::int64_t{0});
}

void to_json(nlohmann::json& j, const Node& n) {
  j = nlohmann::json{{"node_id", n.node_id},
                     {"labels", n.labels},
                     {"taints", n.taints},
                     {"gpu_count", n.gpu_count},
                     {"gpu_model", n.gpu_model},
                     {"driver_version", n.driver_version},
                     {"max_cuda", n.max_cuda},
                     {"image_cache", n.image_cache},
                     {"cpu_capacity", n.cpu_capacity},
                     {"mem_capacity", n.mem_capacity},
                     {"free", n.free}};
}

// Missing fields fall back to the workstation defaults, so config files can stay terse.
void from_json(const nlohmann::json& j, Node& n) {
  n = Node{};
  n.node_id = j.at("node_id").get<std::string>();
  n.labels = j.value("labels", n.labels);
  n.gpu_count = j.value("gpu_count", n.gpu_count);
  n.gpu_model = j.value("gpu_model", n.gpu_model);
  n.driver_version = j.value("driver_version", n.driver_version);
  if (j.contains("max_cuda")) n.max_cuda = j.at("max_cuda").get<CudaVersion>();
  n.image_cache = j.value("image_cache", n.image_cache);
  n.cpu_capacity = j.value("cpu_capacity", n.cpu_capacity);
  n.mem_capacity = j.value("mem_capacity", n.mem_capacity);
  if (j.contains("taints")) {
    n.taints = j.at("taints").get<std::set<Taint>>();
  } else if (n.gpu_count > 0) {
    n.taints.insert(gpu_taint());
  }
  n.free = j.contains("free") ? j.at("free").get<ResourceSpec>() : n.capacity();
}

}  // namespace labplane
