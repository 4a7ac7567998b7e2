#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "labplane/json_support.hpp"

namespace labplane {

/// Simulated time, in seconds since the Unix epoch.
using Timestamp = double;
using Seconds = double;

inline constexpr Seconds kMinute = 60.0;
inline constexpr Seconds kHour = 3600.0;
inline constexpr Seconds kDay = 86400.0;

/// CUDA version as two numeric components. "12.10" is newer than "12.4".
struct CudaVersion {
  std::uint32_t major = 0;
  std::uint32_t minor = 0;

  auto operator<=>(const CudaVersion&) const = default;

  /// Parses "MAJOR.MINOR" (a bare "MAJOR" means minor 0).
  static CudaVersion parse(std::string_view text);
  std::string str() const;
};

enum class Ordering { kLess, kEqual, kGreater };

Ordering compare_cuda(const CudaVersion& a, const CudaVersion& b) noexcept;

enum class TaintEffect { kNoSchedule };

struct Taint {
  std::string key;
  TaintEffect effect = TaintEffect::kNoSchedule;

  auto operator<=>(const Taint&) const = default;
};

/// Key of the taint every GPU node carries; only GPU-requesting workloads tolerate it.
inline constexpr std::string_view kGpuTaintKey = "nvidia.com/gpu";

inline Taint gpu_taint() { return Taint{std::string(kGpuTaintKey), TaintEffect::kNoSchedule}; }

struct ResourceSpec {
  std::int64_t cpu_millicores = 0;
  std::int64_t mem_bytes = 0;
  std::int64_t gpu_count = 0;

  bool operator==(const ResourceSpec&) const = default;

  bool cpu_only() const noexcept { return gpu_count == 0; }

  /// True when every component is <= the matching component of `available`.
  bool fits_within(const ResourceSpec& available) const noexcept {
    return cpu_millicores <= available.cpu_millicores && mem_bytes <= available.mem_bytes &&
           gpu_count <= available.gpu_count;
  }

  ResourceSpec& operator+=(const ResourceSpec& o) noexcept {
    cpu_millicores += o.cpu_millicores;
    mem_bytes += o.mem_bytes;
    gpu_count += o.gpu_count;
    return *this;
  }
  ResourceSpec& operator-=(const ResourceSpec& o) noexcept {
    cpu_millicores -= o.cpu_millicores;
    mem_bytes -= o.mem_bytes;
    gpu_count -= o.gpu_count;
    return *this;
  }
  friend ResourceSpec operator+(ResourceSpec a, const ResourceSpec& b) noexcept { return a += b; }
  friend ResourceSpec operator-(ResourceSpec a, const ResourceSpec& b) noexcept { return a -= b; }
};

inline constexpr std::int64_t kGiB = std::int64_t{1} << 30;

/// A compute host in the pool.
struct Node {
  std::string node_id;
  std::map<std::string, std::string> labels;
  std::set<Taint> taints;
  std::int64_t gpu_count = 1;
  std::string gpu_model = "RTX A5000";
  std::string driver_version = "580.126.09";
  CudaVersion max_cuda{13, 0};
  // Most recently used tag last.
  std::vector<std::string> image_cache;
  std::int64_t cpu_capacity = 16000;
  std::int64_t mem_capacity = 64 * kGiB;
  ResourceSpec free;

  ResourceSpec capacity() const noexcept { return {cpu_capacity, mem_capacity, gpu_count}; }
  ResourceSpec reserved() const noexcept { return capacity() - free; }
  bool has_gpu_taint() const;
  bool has_cached(std::string_view tag) const;

  bool operator==(const Node&) const = default;
};

/// A node with the workstation defaults (1 GPU, 16 cores, 64 GiB) and free == capacity.
Node make_node(std::string node_id, std::int64_t gpu_count = 1);

/// Throws Error(kInvalidArgument) when a capacity or taint invariant is violated.
void validate_node(const Node& node);

void to_json(nlohmann::json& j, const CudaVersion& v);
void from_json(const nlohmann::json& j, CudaVersion& v);
void to_json(nlohmann::json& j, const Taint& t);
void from_json(const nlohmann::json& j, Taint& t);
void to_json(nlohmann::json& j, const ResourceSpec& r);
void from_json(const nlohmann::json& j, ResourceSpec& r);
void to_json(nlohmann::json& j, const Node& n);
void from_json(const nlohmann::json& j, Node& n);

}  // namespace labplane
