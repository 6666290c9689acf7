#pragma once

#include <span>
#include <vector>

#include "gtree/tree.hpp"

namespace gtree {

/// A descending path i -> j -> k -> p. Slots past `valid_len` hold kNone.
struct Branch3 {
  int i = kNone;
  int j = kNone;
  int k = kNone;
  int p = kNone;
  int valid_len = 0;

  bool operator==(const Branch3&) const = default;
};

/// All branches of a tree grouped by their start node (CSR layout).
struct BranchSet {
  std::vector<Branch3> branches;
  std::vector<int> offsets;  // size() == node count + 1

  std::span<const Branch3> of(int node) const {
    const auto b = static_cast<std::size_t>(offsets[static_cast<std::size_t>(node)]);
    const auto e = static_cast<std::size_t>(offsets[static_cast<std::size_t>(node) + 1]);
    return std::span<const Branch3>(branches).subspan(b, e - b);
  }
  std::size_t node_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t full_length_count() const;
};

/// For each node, every maximal descending path of at most three edges.
/// Paths shorter than three end at a leaf; leaves own no branches.
BranchSet enumerate_branches(const GeometricTree& tree);

}  // namespace gtree
