#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gtree/vec3.hpp"

namespace gtree {

/// Minimum accepted parent-child edge length.
inline constexpr double kMinEdgeLength = 1e-9;

/// Sentinel index for padded branch slots and absent parents.
inline constexpr int kNone = -1;

/// Per-tree target: absent, numeric (class index or regression value), or a class name.
using Label = std::variant<std::monostate, double, std::string>;

struct NodeRecord {
  std::int64_t id = 0;
  std::optional<std::int64_t> parent_id;
  Vec3 position;
  std::vector<double> attrs;

  bool operator==(const NodeRecord&) const = default;
};

/// A validated rooted tree with 3D node positions.
///
/// Nodes are stored sorted by id. Topology queries use dense indices
/// `0..size()-1` into that order; `index_of` maps an id to its index.
class GeometricTree {
 public:
  GeometricTree() = default;

  /// Validates and indexes the node list. Throws FormatError, MultiRootError,
  /// CycleError, DegenerateEdgeError or NumericError on invalid input.
  static GeometricTree from_nodes(std::vector<NodeRecord> nodes, Label label = {});

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  const std::vector<NodeRecord>& nodes() const { return nodes_; }
  const NodeRecord& node(int index) const { return nodes_[static_cast<std::size_t>(index)]; }
  const Vec3& position(int index) const { return nodes_[static_cast<std::size_t>(index)].position; }

  int root() const { return root_; }
  std::int64_t root_id() const { return nodes_[static_cast<std::size_t>(root_)].id; }
  int parent(int index) const { return parent_[static_cast<std::size_t>(index)]; }
  std::span<const int> children(int index) const;
  int depth(int index) const { return depth_[static_cast<std::size_t>(index)]; }
  int max_depth() const;
  /// Root-first breadth-first order of node indices.
  const std::vector<int>& bfs_order() const { return bfs_; }

  /// Throws FormatError when the id is unknown.
  int index_of(std::int64_t id) const;
  std::optional<int> find(std::int64_t id) const;

  /// True when `descendant` lies strictly below `ancestor`. O(1).
  bool is_proper_descendant(int descendant, int ancestor) const;

  /// Width of the attrs vectors (all nodes share it).
  std::size_t attr_dim() const { return nodes_.empty() ? 0 : nodes_.front().attrs.size(); }

  const Label& label() const { return label_; }
  void set_label(Label label) { label_ = std::move(label); }

  /// Copy with positions replaced (same order as nodes()). Revalidates edges.
  GeometricTree with_positions(std::span<const Vec3> positions) const;

  bool operator==(const GeometricTree& o) const { return nodes_ == o.nodes_ && label_ == o.label_; }

 private:
  std::vector<NodeRecord> nodes_;
  Label label_;
  int root_ = kNone;
  std::vector<int> parent_;
  std::vector<int> child_offsets_;
  std::vector<int> child_list_;
  std::vector<int> depth_;
  std::vector<int> bfs_;
  std::vector<int> enter_;
  std::vector<int> exit_;
};

}  // namespace gtree
