#include "gtree/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gtree {

std::vector<BranchFeatures> extract_all_features(const GeometricTree& tree, const BranchSet& branches, Exec exec) {
  std::vector<BranchFeatures> out(branches.branches.size());
  for_each_index(out.size(), exec,
                 [&](std::size_t b) { out[b] = extract_branch_features(tree, branches.branches[b]); });
  return out;
}

SpatialTargets compute_targets(const GeometricTree& tree, Exec exec) {
  const auto n = tree.size();
  if (n < 2) return {};
  // Eccentricity of every node; max gives the diameter, min the radius.
  std::vector<double> ecc(n, 0.0);
  for_each_index(n, exec, [&](std::size_t a) {
    const Vec3 pa = tree.position(static_cast<int>(a));
    double worst = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const Vec3 d = tree.position(static_cast<int>(b)) - pa;
      worst = std::max(worst, dot(d, d));
    }
    ecc[a] = std::sqrt(worst);
  });
  return {*std::max_element(ecc.begin(), ecc.end()), *std::min_element(ecc.begin(), ecc.end())};
}

int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace gtree
