#include "labplane/compat.hpp"

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {

CompatReport check_compatibility(const ImageSpec& image, const Node& node) {
  CompatReport report{image.tag, node.node_id, cuda_compatible(image.cuda_runtime, node.max_cuda), {}};
  if (!report.compatible) {
    report.reason = fmt::format("image '{}' needs CUDA runtime {} but node '{}' supports at most CUDA {}",
                                image.tag, image.cuda_runtime.str(), node.node_id,
                                node.max_cuda.str());
  }
  return report;
}

void ImageRegistry::register_image(ImageSpec spec) {
  if (spec.tag.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "image tag must not be empty", "tag");
  }
  if (images_.contains(spec.tag)) {
    throw Error(ErrorCode::kAlreadyExists,
                fmt::format("image tag '{}' is already published and immutable", spec.tag), "tag");
  }
  auto tag = spec.tag;
  images_.emplace(std::move(tag), std::move(spec));
}

const ImageSpec* ImageRegistry::find(const std::string& tag) const {
  auto it = images_.find(tag);
  return it == images_.end() ? nullptr : &it->second;
}

const ImageSpec& ImageRegistry::at(const std::string& tag) const {
  const ImageSpec* spec = find(tag);
  if (spec == nullptr) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown image tag '{}'", tag), "image_tag");
  }
  return *spec;
}

std::vector<std::string> ImageRegistry::tags() const {
  std::vector<std::string> out;
  out.reserve(images_.size());
  for (const auto& [tag, spec] : images_) out.push_back(tag);
  return out;
}

RevalidationReport revalidate(const ImageRegistry& registry, const Node& before, const Node& after) {
  RevalidationReport out;
  out.node_id = after.node_id;
  for (const auto& [tag, image] : registry.images()) {
    const bool was = cuda_compatible(image.cuda_runtime, before.max_cuda);
    auto report = check_compatibility(image, after);
    if (was && !report.compatible) out.newly_incompatible.push_back(tag);
    if (!was && report.compatible) out.newly_compatible.push_back(tag);
    out.reports.push_back(std::move(report));
  }
  return out;
}

std::vector<ImageSpec> default_image_matrix() {
  return {
      {"pytorch-2x-cu121", {12, 1}, "PyTorch", "2.10", "3.10"},
      {"pytorch-2x-cu124", {12, 4}, "PyTorch", "2.10", "3.10"},
      {"pytorch-2x-cu130", {13, 0}, "PyTorch", "2.10", "3.10"},
  };
}

void to_json(nlohmann::json& j, const ImageSpec& s) {
  j = nlohmann::json{{"tag", s.tag},
                     {"cuda_runtime", s.cuda_runtime},
                     {"framework", s.framework},
                     {"framework_version", s.framework_version},
                     {"interpreter_version", s.interpreter_version}};
}

void from_json(const nlohmann::json& j, ImageSpec& s) {
  s.tag = j.at("tag").get<std::string>();
  s.cuda_runtime = j.at("cuda_runtime").get<CudaVersion>();
  s.framework = j.value("framework", std::string{});
  s.framework_version = j.value("framework_version", std::string{});
  s.interpreter_version = j.value("interpreter_version", std::string{});
}

void to_json(nlohmann::json& j, const CompatReport& r) {
  j = nlohmann::json{{"image_tag", r.image_tag},
                     {"node_id", r.node_id},
                     {"compatible", r.compatible},
                     {"reason", r.reason}};
}

void from_json(const nlohmann::json& j, CompatReport& r) {
  r.image_tag = j.at("image_tag").get<std::string>();
  r.node_id = j.at("node_id").get<std::string>();
  r.compatible = j.at("compatible").get<bool>();
  r.reason = j.value("reason", std::string{});
}

void to_json(nlohmann::json& j, const RevalidationReport& r) {
  j = nlohmann::json{{"node_id", r.node_id},
                     {"reports", r.reports},
                     {"newly_incompatible", r.newly_incompatible},
                     {"newly_compatible", r.newly_compatible}};
}

void from_json(const nlohmann::json& j, RevalidationReport& r) {
  r.node_id = j.at("node_id").get<std::string>();
  r.reports = j.at("reports").get<std::vector<CompatReport>>();
  r.newly_incompatible = j.at("newly_incompatible").get<std::vector<std::string>>();
  r.newly_compatible = j.at("newly_compatible").get<std::vector<std::string>>();
}

}  // namespace labplane
