#pragma once

#include <map>
#include <string>
#include <vector>

#include "labplane/cluster.hpp"
#include "labplane/types.hpp"

namespace labplane {

/// A published container image. Tags are immutable once registered.
struct ImageSpec {
  std::string tag;
  CudaVersion cuda_runtime;
  std::string framework;
  std::string framework_version;
  std::string interpreter_version;

  bool operator==(const ImageSpec&) const = default;
};

struct CompatReport {
  std::string image_tag;
  std::string node_id;
  bool compatible = false;
  std::string reason;  // empty when compatible

  bool operator==(const CompatReport&) const = default;
};

/// The scheduling-time rule: an image runs on a host iff its CUDA runtime is at
/// or below the host's maximum supported CUDA version. Framework and
/// interpreter versions are carried for reporting only.
inline bool cuda_compatible(const CudaVersion& runtime, const CudaVersion& host_max) noexcept {
  return runtime <= host_max;
}

CompatReport check_compatibility(const ImageSpec& image, const Node& node);

class ImageRegistry {
 public:
  /// Throws kAlreadyExists for any tag seen before, identical contents or not.
  void register_image(ImageSpec spec);

  const ImageSpec* find(const std::string& tag) const;
  const ImageSpec& at(const std::string& tag) const;
  bool contains(const std::string& tag) const { return images_.contains(tag); }
  std::size_t size() const noexcept { return images_.size(); }
  const std::map<std::string, ImageSpec>& images() const noexcept { return images_; }
  std::vector<std::string> tags() const;

 private:
  std::map<std::string, ImageSpec> images_;
};

/// Outcome of re-checking every registered image after a host driver change.
struct RevalidationReport {
  std::string node_id;
  std::vector<CompatReport> reports;  // one per registered image, tag order
  std::vector<std::string> newly_incompatible;
  std::vector<std::string> newly_compatible;

  bool unchanged() const noexcept { return newly_incompatible.empty() && newly_compatible.empty(); }
};

RevalidationReport revalidate(const ImageRegistry& registry, const Node& before, const Node& after);

/// The three PyTorch images shipped with the default configuration (CUDA 12.1, 12.4, 13.0).
std::vector<ImageSpec> default_image_matrix();

void to_json(nlohmann::json& j, const ImageSpec& s);
void from_json(const nlohmann::json& j, ImageSpec& s);
void to_json(nlohmann::json& j, const CompatReport& r);
void from_json(const nlohmann::json& j, CompatReport& r);
void to_json(nlohmann::json& j, const RevalidationReport& r);
void from_json(const nlohmann::json& j, RevalidationReport& r);

}  // namespace labplane
