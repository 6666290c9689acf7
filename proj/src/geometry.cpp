#include "gtree/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "gtree/errors.hpp"

namespace gtree {

namespace {

double clamped_acos(double c) { return std::acos(std::clamp(c, -1.0, 1.0)); }

double angle_between(const Vec3& a, double na, const Vec3& b, double nb) {
  return clamped_acos(dot(a, b) / (na * nb));
}

bool plane_defined(const Vec3& a, double na, const Vec3& b, double nb) {
  return norm(cross(a, b)) >= kCollinearTolerance * na * nb;
}

// Signed dihedral about `axis` from the plane (axis, a) to the plane (axis, b).
double signed_dihedral(const Vec3& axis, const Vec3& a, const Vec3& b) {
  Vec3 n1 = cross(axis, a);
  Vec3 n2 = cross(axis, b);
  n1 = n1 / norm(n1);
  n2 = n2 / norm(n2);
  const double magnitude = clamped_acos(dot(n1, n2));
  const Vec3 c = cross(n1, n2);
  const double cn = norm(c);
  // Parallel normals: torsion is 0 or pi and the sign carries no information.
  if (cn < kCollinearTolerance) return magnitude;
  const double sign = dot(c / cn, axis / norm(axis));
  return sign < 0.0 ? -magnitude : magnitude;
}

double wrap_angle_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
  return std::min(d, 2.0 * std::numbers::pi - d);
}

void require_finite(const Vec3& v, const char* what) {
  if (!is_finite(v)) throw NumericError(std::string("non-finite position for ") + what);
}

// Max discrepancy between two feature tuples over entries both define.
double feature_mismatch(const BranchFeatures& a, const BranchFeatures& b) {
  const auto va = a.values();
  const auto vb = b.values();
  double worst = 0.0;
  for (std::size_t n = 0; n < 6; ++n) {
    if (!a.mask[n] || !b.mask[n]) continue;
    const double d = n == 5 ? wrap_angle_distance(va[n], vb[n]) : std::abs(va[n] - vb[n]);
    worst = std::max(worst, d);
  }
  return worst;
}

void check_reproduces(const BranchFeatures& got, const BranchFeatures& want, double scale) {
  const double tol = 1e-7 * std::max(1.0, scale);
  if (feature_mismatch(got, want) > tol)
    throw InfeasibleError("no placement reproduces the branch features");
}

}  // namespace

BranchFeatures extract_branch_features(const Vec3& pos_i, const Vec3& pos_j, const Vec3& pos_k,
                                       const Vec3& pos_p, int valid_len) {
  if (valid_len < 1 || valid_len > 3) throw ContractError("valid_len must be 1, 2 or 3");
  BranchFeatures f;
  require_finite(pos_i, "i");
  require_finite(pos_j, "j");
  const Vec3 pij = pos_j - pos_i;
  f.d_ij = norm(pij);
  if (f.d_ij < kMinEdgeLength) throw NumericError("coincident nodes i and j");
  f.mask[0] = true;
  if (valid_len < 2) return f;

  require_finite(pos_k, "k");
  const Vec3 pjk = pos_k - pos_j;
  f.d_jk = norm(pjk);
  if (f.d_jk < kMinEdgeLength) throw NumericError("coincident nodes j and k");
  f.mask[1] = true;
  f.theta_ijk = angle_between(pij, f.d_ij, pjk, f.d_jk);
  f.mask[3] = true;
  if (valid_len < 3) return f;

  require_finite(pos_p, "p");
  const Vec3 pjp = pos_p - pos_j;
  f.d_jp = norm(pjp);
  f.mask[2] = true;
  if (f.d_jp < kMinEdgeLength) return f;
  f.theta_ijp = angle_between(pij, f.d_ij, pjp, f.d_jp);
  f.mask[4] = true;
  if (plane_defined(pij, f.d_ij, pjk, f.d_jk) && plane_defined(pij, f.d_ij, pjp, f.d_jp)) {
    f.phi_ijkp = signed_dihedral(pij, pjk, pjp);
    f.mask[5] = true;
  }
  return f;
}

BranchFeatures extract_branch_features(const GeometricTree& tree, const Branch3& b) {
  auto pos = [&](int idx) { return idx == kNone ? Vec3{} : tree.position(idx); };
  return extract_branch_features(pos(b.i), pos(b.j), pos(b.k), pos(b.p), b.valid_len);
}

void RigidTransform::validate() const {
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double s = 0.0;
      for (int r = 0; r < 3; ++r) s += rotation[r][a] * rotation[r][b];
      if (std::abs(s - (a == b ? 1.0 : 0.0)) > 1e-12) throw TransformError("rotation is not orthonormal");
    }
  }
  const auto& m = rotation;
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::abs(det - 1.0) > 1e-12) throw TransformError("rotation determinant is not +1");
  if (!is_finite(translation)) throw TransformError("non-finite translation");
}

Vec3 RigidTransform::apply(const Vec3& x) const {
  const auto& r = rotation;
  return {r[0][0] * x.x + r[0][1] * x.y + r[0][2] * x.z + translation.x,
          r[1][0] * x.x + r[1][1] * x.y + r[1][2] * x.z + translation.y,
          r[2][0] * x.x + r[2][1] * x.y + r[2][2] * x.z + translation.z};
}

GeometricTree apply_rigid(const GeometricTree& tree, const RigidTransform& transform) {
  transform.validate();
  std::vector<Vec3> moved;
  moved.reserve(tree.size());
  for (const auto& n : tree.nodes()) moved.push_back(transform.apply(n.position));
  return tree.with_positions(moved);
}

namespace {

RigidTransform from_quaternion(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  RigidTransform t;
  t.rotation = {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                 {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                 {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
  return t;
}

}  // namespace

RigidTransform random_rotation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double q[4];
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& c : q) {
      c = gauss(rng);
      n2 += c * c;
    }
  } while (n2 < 1e-12);
  return from_quaternion(q[0], q[1], q[2], q[3]);
}

RigidTransform axis_angle_rotation(const Vec3& axis, double angle) {
  const double n = norm(axis);
  if (!(n > 0.0)) throw TransformError("rotation axis must be non-zero");
  const Vec3 a = axis / n;
  const double s = std::sin(angle / 2.0);
  return from_quaternion(std::cos(angle / 2.0), a.x * s, a.y * s, a.z * s);
}

Vec3 reconstruct_node(const Vec3& pos_j, const Vec3& pos_k, const Vec3& pos_p, const BranchFeatures& f) {
  require_finite(pos_j, "j");
  require_finite(pos_k, "k");
  require_finite(pos_p, "p");
  if (!f.mask[0] || !f.mask[1] || !f.mask[2] || !f.mask[3] || !f.mask[4])
    throw InfeasibleError("branch features are incomplete");
  const Vec3 pjk = pos_k - pos_j;
  const Vec3 pjp = pos_p - pos_j;
  const double njk = norm(pjk);
  const double njp = norm(pjp);
  const double scale = std::max({njk, njp, f.d_ij});
  if (njk < kMinEdgeLength || njp < kMinEdgeLength || !plane_defined(pjk, njk, pjp, njp))
    throw CollinearError("anchor nodes j, k, p are collinear");

  // Orthonormal frame spanned by the anchors; u = P_ij = a e1 + b e2 + c e3.
  const Vec3 e1 = pjk / njk;
  const Vec3 w = pjp - dot(pjp, e1) * e1;
  const Vec3 e2 = w / norm(w);
  const Vec3 e3 = cross(e1, e2);
  const double d = f.d_ij;
  const double a = d * std::cos(f.theta_ijk);
  const double b = (d * njp * std::cos(f.theta_ijp) - a * dot(pjp, e1)) / norm(w);
  const double c2 = d * d - a * a - b * b;
  if (c2 < -1e-8 * scale * scale) throw InfeasibleError("distance and angles are inconsistent");
  const double c = std::sqrt(std::max(0.0, c2));

  const Vec3 up = a * e1 + b * e2 + c * e3;
  const Vec3 dn = a * e1 + b * e2 - c * e3;
  const Vec3 cand_up = pos_j - up;
  const Vec3 cand_dn = pos_j - dn;
  Vec3 best = cand_up;
  if (f.mask[5]) {
    const auto fu = extract_branch_features(cand_up, pos_j, pos_k, pos_p, 3);
    const auto fd = extract_branch_features(cand_dn, pos_j, pos_k, pos_p, 3);
    const double eu = fu.mask[5] ? wrap_angle_distance(fu.phi_ijkp, f.phi_ijkp) : 0.0;
    const double ed = fd.mask[5] ? wrap_angle_distance(fd.phi_ijkp, f.phi_ijkp) : 0.0;
    best = eu <= ed ? cand_up : cand_dn;
  } else if (c > 1e-7 * std::max(1.0, scale)) {
    throw InfeasibleError("torsion is undefined but the placement is not unique");
  }
  check_reproduces(extract_branch_features(best, pos_j, pos_k, pos_p, 3), f, scale);
  return best;
}

Vec3 place_descendant(const Vec3& pos_i, const Vec3& pos_j, const Vec3& pos_k, const BranchFeatures& f) {
  require_finite(pos_i, "i");
  require_finite(pos_j, "j");
  require_finite(pos_k, "k");
  if (!f.complete()) throw InfeasibleError("branch features are incomplete");
  const Vec3 pij = pos_j - pos_i;
  const Vec3 pjk = pos_k - pos_j;
  const double nij = norm(pij);
  const double njk = norm(pjk);
  if (nij < kMinEdgeLength || njk < kMinEdgeLength || !plane_defined(pij, nij, pjk, njk))
    throw CollinearError("anchor nodes i, j, k are collinear");
  const Vec3 e1 = pij / nij;
  const Vec3 w = pjk - dot(pjk, e1) * e1;
  const Vec3 f2 = w / norm(w);
  const Vec3 f3 = cross(e1, f2);
  const Vec3 q = std::cos(f.phi_ijkp) * f2 + std::sin(f.phi_ijkp) * f3;
  const Vec3 pos_p = pos_j + f.d_jp * (std::cos(f.theta_ijp) * e1 + std::sin(f.theta_ijp) * q);
  check_reproduces(extract_branch_features(pos_i, pos_j, pos_k, pos_p, 3), f, std::max({nij, njk, f.d_jp}));
  return pos_p;
}

Vec3 place_middle(const Vec3& pos_i, const Vec3& pos_j, const Vec3& pos_p, const BranchFeatures& f) {
  require_finite(pos_i, "i");
  require_finite(pos_j, "j");
  require_finite(pos_p, "p");
  if (!f.complete()) throw InfeasibleError("branch features are incomplete");
  const Vec3 pij = pos_j - pos_i;
  const Vec3 pjp = pos_p - pos_j;
  const double nij = norm(pij);
  const double njp = norm(pjp);
  if (nij < kMinEdgeLength || njp < kMinEdgeLength || !plane_defined(pij, nij, pjp, njp))
    throw CollinearError("anchor nodes i, j, p are collinear");
  const Vec3 e1 = pij / nij;
  const Vec3 w = pjp - dot(pjp, e1) * e1;
  const Vec3 g2 = w / norm(w);
  const Vec3 g3 = cross(e1, g2);
  // p sits at +phi from k about the i->j axis, so k sits at -phi from p.
  const Vec3 q = std::cos(f.phi_ijkp) * g2 - std::sin(f.phi_ijkp) * g3;
  const Vec3 pos_k = pos_j + f.d_jk * (std::cos(f.theta_ijk) * e1 + std::sin(f.theta_ijk) * q);
  check_reproduces(extract_branch_features(pos_i, pos_j, pos_k, pos_p, 3), f, std::max({nij, njp, f.d_jk}));
  return pos_k;
}

std::vector<Vec3> reconstruct_tree(const GeometricTree& topology, std::span<const BranchRecord> features,
                                   const std::array<int, 3>& seed_nodes,
                                   const std::array<Vec3, 3>& seed_positions) {
  const auto n = topology.size();
  for (int s : seed_nodes)
    if (s < 0 || static_cast<std::size_t>(s) >= n) throw ContractError("seed node out of range");
  if (topology.parent(seed_nodes[1]) != seed_nodes[0] || topology.parent(seed_nodes[2]) != seed_nodes[1])
    throw ContractError("seed nodes must form a parent -> child -> grandchild chain");
  {
    const Vec3 a = seed_positions[1] - seed_positions[0];
    const Vec3 b = seed_positions[2] - seed_positions[0];
    const double na = norm(a);
    const double nb = norm(b);
    if (na < kMinEdgeLength || nb < kMinEdgeLength || !plane_defined(a, na, b, nb))
      throw CollinearError("seed nodes are collinear");
  }

  std::vector<Vec3> pos(n);
  std::vector<char> known(n, 0);
  for (int s = 0; s < 3; ++s) {
    pos[static_cast<std::size_t>(seed_nodes[static_cast<std::size_t>(s)])] = seed_positions[static_cast<std::size_t>(s)];
    known[static_cast<std::size_t>(seed_nodes[static_cast<std::size_t>(s)])] = 1;
  }
  std::size_t placed = 3;

  std::vector<const BranchRecord*> full;
  for (const auto& r : features)
    if (r.branch.valid_len == 3) full.push_back(&r);

  std::string collinear_note;
  bool progress = true;
  while (placed < n && progress) {
    progress = false;
    for (const BranchRecord* r : full) {
      const auto [i, j, k, p, len] = r->branch;
      (void)len;
      const auto ui = static_cast<std::size_t>(i);
      const auto uj = static_cast<std::size_t>(j);
      const auto uk = static_cast<std::size_t>(k);
      const auto up = static_cast<std::size_t>(p);
      const int unknown = !known[ui] + !known[uj] + !known[uk] + !known[up];
      if (unknown != 1 || !known[uj]) continue;
      try {
        if (!known[ui]) {
          pos[ui] = reconstruct_node(pos[uj], pos[uk], pos[up], r->features);
          known[ui] = 1;
        } else if (!known[up]) {
          pos[up] = place_descendant(pos[ui], pos[uj], pos[uk], r->features);
          known[up] = 1;
        } else {
          pos[uk] = place_middle(pos[ui], pos[uj], pos[up], r->features);
          known[uk] = 1;
        }
        ++placed;
        progress = true;
      } catch (const CollinearError& e) {
        if (collinear_note.empty())
          collinear_note = std::string(e.what()) + " in branch " + std::to_string(topology.node(i).id) + "->" +
                           std::to_string(topology.node(j).id) + "->" + std::to_string(topology.node(k).id) +
                           "->" + std::to_string(topology.node(p).id);
      } catch (const InfeasibleError&) {
        // another branch may still place this node
      }
    }
  }
  if (placed < n) {
    if (!collinear_note.empty()) throw CollinearError(collinear_note);
    std::size_t first = 0;
    while (known[first]) ++first;
    throw UnreachableNodeError("cannot place node " + std::to_string(topology.node(static_cast<int>(first)).id) +
                               " (" + std::to_string(n - placed) + " nodes unplaced)");
  }
  return pos;
}

}  // namespace gtree
