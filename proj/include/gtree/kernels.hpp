#pragma once

#include <cstddef>
#include <vector>

#include "gtree/branches.hpp"
#include "gtree/geometry.hpp"
#include "gtree/tree.hpp"

namespace gtree {

/// Execution policy for the data-parallel kernels. `Serial` is the reference
/// path; `Parallel` uses OpenMP and must produce bit-identical results.
enum class Exec { Serial, Parallel };

/// Calls fn(i) for i in [0, n). Parallel iterations must write disjoint state.
template <typename Fn>
void for_each_index(std::size_t n, Exec exec, Fn&& fn) {
  const auto count = static_cast<long long>(n);
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
  } else {
    for (long long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
  }
}

/// Features for every branch of `branches`, in the same order.
std::vector<BranchFeatures> extract_all_features(const GeometricTree& tree, const BranchSet& branches,
                                                 Exec exec = Exec::Parallel);

struct SpatialTargets {
  double diameter = 0.0;  // max pairwise Euclidean distance
  double radius = 0.0;    // min over nodes of the max distance to any node
};

SpatialTargets compute_targets(const GeometricTree& tree, Exec exec = Exec::Parallel);

/// Configured OpenMP worker count (1 when built without OpenMP).
int worker_count();

}  // namespace gtree
