#include "gtree/branches.hpp"

#include <algorithm>

namespace gtree {

std::size_t BranchSet::full_length_count() const {
  return static_cast<std::size_t>(
      std::count_if(branches.begin(), branches.end(), [](const Branch3& b) { return b.valid_len == 3; }));
}

BranchSet enumerate_branches(const GeometricTree& tree) {
  BranchSet set;
  const auto n = static_cast<int>(tree.size());
  set.offsets.reserve(static_cast<std::size_t>(n) + 1);
  set.branches.reserve(static_cast<std::size_t>(n) * 2);
  set.offsets.push_back(0);
  for (int i = 0; i < n; ++i) {
    for (int j : tree.children(i)) {
      auto jk = tree.children(j);
      if (jk.empty()) {
        set.branches.push_back({i, j, kNone, kNone, 1});
        continue;
      }
      for (int k : jk) {
        auto kp = tree.children(k);
        if (kp.empty()) {
          set.branches.push_back({i, j, k, kNone, 2});
          continue;
        }
        for (int p : kp) set.branches.push_back({i, j, k, p, 3});
      }
    }
    set.offsets.push_back(static_cast<int>(set.branches.size()));
  }
  return set;
}

}  // namespace gtree
