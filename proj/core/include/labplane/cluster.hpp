#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "labplane/types.hpp"

namespace labplane {

/// Node inventory and resource bookkeeping.
///
/// The control plane only talks to the pool through this interface, so a
/// backend that drives a real orchestrator could stand in for the in-memory
/// simulation without touching the scheduler or the lifecycle code.
class ClusterBackend {
 public:
  virtual ~ClusterBackend() = default;

  virtual void register_node(Node node) = 0;
  virtual void deregister_node(const std::string& node_id) = 0;

  virtual const Node* find(const std::string& node_id) const = 0;
  /// All nodes ordered by node_id.
  virtual std::vector<const Node*> nodes() const = 0;

  virtual void reserve(const std::string& node_id, const ResourceSpec& request) = 0;
  virtual void release(const std::string& node_id, const ResourceSpec& request) = 0;

  /// Records a pulled image; evicts the least recently used tag when a cache capacity is set.
  virtual void cache_image(const std::string& node_id, const std::string& tag) = 0;
  virtual void touch_image(const std::string& node_id, const std::string& tag) = 0;

  virtual void set_driver(const std::string& node_id, std::string driver_version,
                          CudaVersion max_cuda) = 0;

  const Node& at(const std::string& node_id) const;
};

class InMemoryCluster final : public ClusterBackend {
 public:
  InMemoryCluster() = default;
  explicit InMemoryCluster(std::optional<std::size_t> image_cache_capacity)
      : cache_capacity_(image_cache_capacity) {}

  void register_node(Node node) override;
  void deregister_node(const std::string& node_id) override;
  const Node* find(const std::string& node_id) const override;
  std::vector<const Node*> nodes() const override;
  void reserve(const std::string& node_id, const ResourceSpec& request) override;
  void release(const std::string& node_id, const ResourceSpec& request) override;
  void cache_image(const std::string& node_id, const std::string& tag) override;
  void touch_image(const std::string& node_id, const std::string& tag) override;
  void set_driver(const std::string& node_id, std::string driver_version,
                  CudaVersion max_cuda) override;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::optional<std::size_t> cache_capacity() const noexcept { return cache_capacity_; }
  void set_cache_capacity(std::optional<std::size_t> capacity) { cache_capacity_ = capacity; }

  const std::map<std::string, Node>& node_map() const noexcept { return nodes_; }

 private:
  Node& mutable_at(const std::string& node_id);

  std::map<std::string, Node> nodes_;
  std::optional<std::size_t> cache_capacity_;
};

}  // namespace labplane
