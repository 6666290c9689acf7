#include "gtree/tree.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gtree/errors.hpp"

namespace gtree {

GeometricTree GeometricTree::from_nodes(std::vector<NodeRecord> nodes, Label label) {
  if (nodes.empty()) throw FormatError("tree has no nodes");
  std::sort(nodes.begin(), nodes.end(),
            [](const NodeRecord& a, const NodeRecord& b) { return a.id < b.id; });

  GeometricTree t;
  t.nodes_ = std::move(nodes);
  t.label_ = std::move(label);
  const auto n = t.nodes_.size();
  const auto attr_dim = t.nodes_.front().attrs.size();

  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = t.nodes_[i];
    if (rec.id < 0) throw FormatError("negative node id " + std::to_string(rec.id));
    if (i > 0 && rec.id == t.nodes_[i - 1].id)
      throw FormatError("duplicate node id " + std::to_string(rec.id));
    if (!is_finite(rec.position))
      throw NumericError("non-finite coordinate at node " + std::to_string(rec.id));
    if (rec.attrs.size() != attr_dim)
      throw FormatError("node " + std::to_string(rec.id) + " has attrs of inconsistent width");
    for (double a : rec.attrs)
      if (!std::isfinite(a)) throw NumericError("non-finite attr at node " + std::to_string(rec.id));
  }

  t.parent_.assign(n, kNone);
  std::vector<int> roots;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = t.nodes_[i];
    if (!rec.parent_id) {
      roots.push_back(static_cast<int>(i));
      continue;
    }
    if (*rec.parent_id == rec.id)
      throw CycleError("node " + std::to_string(rec.id) + " is its own parent");
    auto p = t.find(*rec.parent_id);
    if (!p)
      throw FormatError("node " + std::to_string(rec.id) + " references missing parent " +
                        std::to_string(*rec.parent_id));
    t.parent_[i] = *p;
  }
  if (roots.empty()) throw CycleError("no root: every node has a parent");
  if (roots.size() > 1)
    throw MultiRootError("tree has " + std::to_string(roots.size()) + " roots");
  t.root_ = roots.front();

  // Children in CSR layout, ordered by node index.
  std::vector<int> counts(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i)
    if (t.parent_[i] != kNone) ++counts[static_cast<std::size_t>(t.parent_[i]) + 1];
  for (std::size_t i = 0; i < n; ++i) counts[i + 1] += counts[i];
  t.child_offsets_ = counts;
  t.child_list_.assign(n > 0 ? n - 1 : 0, 0);
  std::vector<int> fill(counts.begin(), counts.end() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = t.parent_[i];
    if (p != kNone) t.child_list_[static_cast<std::size_t>(fill[static_cast<std::size_t>(p)]++)] = static_cast<int>(i);
  }

  // Breadth-first from the root; unreached nodes sit on a parent cycle.
  t.depth_.assign(n, -1);
  t.bfs_.clear();
  t.bfs_.reserve(n);
  t.bfs_.push_back(t.root_);
  t.depth_[static_cast<std::size_t>(t.root_)] = 0;
  for (std::size_t head = 0; head < t.bfs_.size(); ++head) {
    const int u = t.bfs_[head];
    for (int c : t.children(u)) {
      t.depth_[static_cast<std::size_t>(c)] = t.depth_[static_cast<std::size_t>(u)] + 1;
      t.bfs_.push_back(c);
    }
  }
  if (t.bfs_.size() != n) {
    for (std::size_t i = 0; i < n; ++i)
      if (t.depth_[i] < 0)
        throw CycleError("node " + std::to_string(t.nodes_[i].id) + " lies on a parent cycle");
  }

  for (std::size_t i = 0; i < n; ++i) {
    const int p = t.parent_[i];
    if (p == kNone) continue;
    if (norm(t.nodes_[i].position - t.nodes_[static_cast<std::size_t>(p)].position) < kMinEdgeLength)
      throw DegenerateEdgeError("zero-length edge " + std::to_string(t.nodes_[static_cast<std::size_t>(p)].id) +
                                " -> " + std::to_string(t.nodes_[i].id));
  }

  // Euler tour for O(1) ancestor queries.
  t.enter_.assign(n, 0);
  t.exit_.assign(n, 0);
  int clock = 0;
  std::vector<std::pair<int, std::size_t>> stack{{t.root_, 0}};
  t.enter_[static_cast<std::size_t>(t.root_)] = clock++;
  while (!stack.empty()) {
    auto& [u, next] = stack.back();
    auto kids = t.children(u);
    if (next < kids.size()) {
      const int c = kids[next++];
      t.enter_[static_cast<std::size_t>(c)] = clock++;
      stack.emplace_back(c, 0);
    } else {
      t.exit_[static_cast<std::size_t>(u)] = clock++;
      stack.pop_back();
    }
  }
  return t;
}

std::span<const int> GeometricTree::children(int index) const {
  const auto i = static_cast<std::size_t>(index);
  const auto b = static_cast<std::size_t>(child_offsets_[i]);
  const auto e = static_cast<std::size_t>(child_offsets_[i + 1]);
  return std::span<const int>(child_list_).subspan(b, e - b);
}

int GeometricTree::max_depth() const {
  return depth_.empty() ? 0 : *std::max_element(depth_.begin(), depth_.end());
}

std::optional<int> GeometricTree::find(std::int64_t id) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id,
                             [](const NodeRecord& r, std::int64_t v) { return r.id < v; });
  if (it == nodes_.end() || it->id != id) return std::nullopt;
  return static_cast<int>(it - nodes_.begin());
}

int GeometricTree::index_of(std::int64_t id) const {
  auto idx = find(id);
  if (!idx) throw FormatError("unknown node id " + std::to_string(id));
  return *idx;
}

bool GeometricTree::is_proper_descendant(int descendant, int ancestor) const {
  if (descendant == ancestor) return false;
  const auto d = static_cast<std::size_t>(descendant);
  const auto a = static_cast<std::size_t>(ancestor);
  return enter_[a] < enter_[d] && exit_[d] < exit_[a];
}

GeometricTree GeometricTree::with_positions(std::span<const Vec3> positions) const {
  if (positions.size() != nodes_.size())
    throw ContractError("position count does not match node count");
  auto nodes = nodes_;
  for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i].position = positions[i];
  return from_nodes(std::move(nodes), label_);
}

}  // namespace gtree
