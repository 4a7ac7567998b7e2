#include "labplane/cluster.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {

const Node& ClusterBackend::at(const std::string& node_id) const {
  const Node* node = find(node_id);
  if (node == nullptr) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown node '{}'", node_id), "node_id");
  }
  return *node;
}

void InMemoryCluster::register_node(Node node) {
  if (nodes_.contains(node.node_id)) {
    throw Error(ErrorCode::kAlreadyExists,
                fmt::format("node '{}' is already registered", node.node_id), "node_id");
  }
  if (node.gpu_count > 0) node.taints.insert(gpu_taint());
  node.free = node.capacity();
  validate_node(node);
  if (cache_capacity_) {
    while (node.image_cache.size() > *cache_capacity_) node.image_cache.erase(node.image_cache.begin());
  }
  auto id = node.node_id;
  nodes_.emplace(std::move(id), std::move(node));
}

void InMemoryCluster::deregister_node(const std::string& node_id) {
  if (nodes_.erase(node_id) == 0) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown node '{}'", node_id), "node_id");
  }
}

const Node* InMemoryCluster::find(const std::string& node_id) const {
  auto it = nodes_.find(node_id);
  return it == nodes_.end() ? nullptr : &it->second;
}

std::vector<const Node*> InMemoryCluster::nodes() const {
  std::vector<const Node*> out;
  out.reserve(nodes_.size());
  for (const auto& [id, node] : nodes_) out.push_back(&node);
  return out;
}

Node& InMemoryCluster::mutable_at(const std::string& node_id) {
  auto it = nodes_.find(node_id);
  if (it == nodes_.end()) {
    throw Error(ErrorCode::kNotFound, fmt::format("unknown node '{}'", node_id), "node_id");
  }
  return it->second;
}

void InMemoryCluster::reserve(const std::string& node_id, const ResourceSpec& request) {
  Node& node = mutable_at(node_id);
  if (!request.fits_within(node.free)) {
    throw Error(ErrorCode::kFailedPrecondition,
                fmt::format("request does not fit the free capacity of node '{}'", node_id),
                "resources");
  }
  node.free -= request;
}

void InMemoryCluster::release(const std::string& node_id, const ResourceSpec& request) {
  Node& node = mutable_at(node_id);
  const ResourceSpec after = node.free + request;
  if (!after.fits_within(node.capacity())) {
    throw Error(ErrorCode::kFailedPrecondition,
                fmt::format("release would exceed the capacity of node '{}'", node_id),
                "resources");
  }
  node.free = after;
}

void InMemoryCluster::cache_image(const std::string& node_id, const std::string& tag) {
  Node& node = mutable_at(node_id);
  std::erase(node.image_cache, tag);
  node.image_cache.push_back(tag);
  if (cache_capacity_) {
    while (node.image_cache.size() > *cache_capacity_) node.image_cache.erase(node.image_cache.begin());
  }
}

void InMemoryCluster::touch_image(const std::string& node_id, const std::string& tag) {
  Node& node = mutable_at(node_id);
  auto it = std::find(node.image_cache.begin(), node.image_cache.end(), tag);
  if (it == node.image_cache.end()) return;
  std::rotate(it, it + 1, node.image_cache.end());
}

void InMemoryCluster::set_driver(const std::string& node_id, std::string driver_version,
                                 CudaVersion max_cuda) {
  Node& node = mutable_at(node_id);
  node.driver_version = std::move(driver_version);
  node.max_cuda = max_cuda;
}

}  // namespace labplane
