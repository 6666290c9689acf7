#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gtree/branches.hpp"
#include "gtree/tree.hpp"
#include "gtree/vec3.hpp"

namespace gtree {

/// Relative threshold (sine of the angle between two edges) below which a
/// plane through them is treated as undefined.
inline constexpr double kCollinearTolerance = 1e-9;

/// Rotation/translation-invariant description of one branch i -> j -> k -> p.
///
/// Vectors are taken as P_xy = pos_y - pos_x. Angles are in radians:
/// theta in [0, pi], phi in [-pi, pi]. `mask[n]` is false when entry n needs
/// a padded node or is geometrically undefined; the entry is then 0.
struct BranchFeatures {
  double d_ij = 0.0;
  double d_jk = 0.0;
  double d_jp = 0.0;
  double theta_ijk = 0.0;
  double theta_ijp = 0.0;
  double phi_ijkp = 0.0;
  std::array<bool, 6> mask{};

  static constexpr std::size_t kWidth = 6;

  std::array<double, 6> values() const { return {d_ij, d_jk, d_jp, theta_ijk, theta_ijp, phi_ijkp}; }
  bool complete() const {
    for (bool m : mask)
      if (!m) return false;
    return true;
  }
};

/// Throws NumericError on non-finite input or coincident consecutive nodes.
BranchFeatures extract_branch_features(const Vec3& pos_i, const Vec3& pos_j, const Vec3& pos_k,
                                       const Vec3& pos_p, int valid_len);

BranchFeatures extract_branch_features(const GeometricTree& tree, const Branch3& branch);

using Mat3 = std::array<std::array<double, 3>, 3>;

struct RigidTransform {
  Mat3 rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation;

  static RigidTransform identity() { return {}; }

  /// Throws TransformError unless rotation is orthonormal with det +1 (1e-12).
  void validate() const;
  Vec3 apply(const Vec3& x) const;
  double trace() const { return rotation[0][0] + rotation[1][1] + rotation[2][2]; }
};

/// Maps every position x to R x + t. Topology, attrs and label are kept.
GeometricTree apply_rigid(const GeometricTree& tree, const RigidTransform& transform);

/// Haar-uniform rotation (normalized Gaussian quaternion), zero translation.
RigidTransform random_rotation(std::uint64_t seed);

/// Rotation by `angle` radians about `axis` (need not be normalized).
RigidTransform axis_angle_rotation(const Vec3& axis, double angle);

/// Position of node i given j, k, p and the features of branch (i, j, k, p).
/// Throws CollinearError when j, k, p are collinear and InfeasibleError when
/// no placement reproduces the features.
Vec3 reconstruct_node(const Vec3& pos_j, const Vec3& pos_k, const Vec3& pos_p, const BranchFeatures& f);

/// Position of node p given i, j, k and the features of branch (i, j, k, p).
Vec3 place_descendant(const Vec3& pos_i, const Vec3& pos_j, const Vec3& pos_k, const BranchFeatures& f);

/// Position of node k given i, j, p and the features of branch (i, j, k, p).
Vec3 place_middle(const Vec3& pos_i, const Vec3& pos_j, const Vec3& pos_p, const BranchFeatures& f);

struct BranchRecord {
  Branch3 branch;
  BranchFeatures features;
};

/// Recovers every node position from full-length branch features, starting
/// from three known nodes forming a parent -> child -> grandchild chain.
/// Positions in `topology` are ignored; the result is indexed like
/// `topology.nodes()`.
std::vector<Vec3> reconstruct_tree(const GeometricTree& topology, std::span<const BranchRecord> features,
                                   const std::array<int, 3>& seed_nodes,
                                   const std::array<Vec3, 3>& seed_positions);

}  // namespace gtree
