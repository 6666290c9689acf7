#include <doctest.h>

#include <cmath>
#include <queue>
#include <random>

#include "gtree/branches.hpp"
#include "gtree/errors.hpp"
#include "gtree/io.hpp"
#include "gtree/kernels.hpp"
#include "gtree/synthetic.hpp"
#include "support.hpp"

using namespace gtree;
using gtree::testing::make_tree;
using gtree::testing::random_tree;

namespace {

// Depths by an explicit BFS over parent links, independent of the tree's own index.
std::vector<int> bfs_depths(const GeometricTree& t) {
  const int n = static_cast<int>(t.size());
  std::vector<std::vector<int>> kids(static_cast<std::size_t>(n));
  int root = -1;
  for (int v = 0; v < n; ++v) {
    const auto& rec = t.node(v);
    if (!rec.parent_id) root = v;
    else kids[static_cast<std::size_t>(t.index_of(*rec.parent_id))].push_back(v);
  }
  std::vector<int> depth(static_cast<std::size_t>(n), -1);
  std::queue<int> q;
  q.push(root);
  depth[static_cast<std::size_t>(root)] = 0;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int c : kids[static_cast<std::size_t>(v)]) {
      depth[static_cast<std::size_t>(c)] = depth[static_cast<std::size_t>(v)] + 1;
      q.push(c);
    }
  }
  return depth;
}

}  // namespace

TEST_CASE("swc path parses into a four node chain") {
  const auto t = parse_swc(
      "# a path\n"
      "1 1 0 0 0 1.0 -1\n"
      "2 3 1 0 0 0.5 1\n"
      "3 3 2 0 0 0.5 2\n"
      "4 9 3 0 0 0.5 3\n");
  CHECK(t.size() == 4);
  CHECK(t.max_depth() == 3);
  int edges = 0;
  for (int v = 0; v < 4; ++v) edges += t.parent(v) != kNone;
  CHECK(edges == 3);
  CHECK(t.attr_dim() == kSwcAttrDim);
  CHECK(t.node(0).attrs[0] == 1.0);
  CHECK(t.node(1).attrs[2] == 1.0);
  CHECK(t.node(3).attrs[7] == 1.0);  // unknown type code
  CHECK(t.node(0).attrs[8] == 1.0);  // radius
}

TEST_CASE("swc ids are remapped densely in file order") {
  const auto t = parse_swc("10 1 0 0 0 1 -1\n30 3 0 1 0 1 10\n20 3 0 0 1 1 10\n");
  CHECK(t.node(1).position == Vec3{0, 1, 0});
  CHECK(t.parent(2) == 0);
}

TEST_CASE("swc structural errors") {
  CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1 -1\n2 1 1 0 0 1 1\n3 1 2 0 0 1 99\n"), FormatError);
  CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1 -1\n2 1 1 0 0 1 -1\n"), MultiRootError);
  CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1 -1\n2 1 1 0 0 1 3\n3 1 2 0 0 1 2\n"), CycleError);
  CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1 -1\n2 1 0 0 0 1 1\n"), DegenerateEdgeError);
  CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1\n"), FormatError);
  CHECK_THROWS_AS(parse_swc("# only comments\n"), FormatError);
}

TEST_CASE("json single node and self parent") {
  const auto t = parse_tree_json(R"({"root":0,"nodes":[{"id":0,"xyz":[0,0,0]}]})");
  CHECK(t.size() == 1);
  CHECK(t.root_id() == 0);
  CHECK_THROWS_AS(parse_tree_json(R"({"root":0,"nodes":[{"id":0,"parent":0,"xyz":[0,0,0]}]})"), CycleError);
  CHECK_THROWS_AS(parse_tree_json(R"({"root":0,"nodes":[{"id":0,"xyz":[0,0]}]})"), FormatError);
  CHECK_THROWS_AS(parse_tree_json(R"({"root":5,"nodes":[{"id":0,"xyz":[0,0,0]}]})"), FormatError);
  CHECK_THROWS_AS(parse_tree_json("not json"), FormatError);
}

TEST_CASE("json round trip is canonical on generated trees") {
  GeneratorConfig cfg;
  cfg.count = 100;
  cfg.min_depth = 3;
  cfg.max_depth = 6;
  const auto samples = generate_synthetic(cfg, 17);
  for (const auto& s : samples) {
    const auto text = serialize_tree_json(s.tree);
    const auto back = parse_tree_json(text);
    CHECK(back == s.tree);
    CHECK(serialize_tree_json(back) == text);
  }
  // Non-canonical input (whitespace, shuffled nodes) canonicalizes.
  const auto messy = R"({ "nodes": [ {"id": 2, "parent": 1, "xyz": [0.1, 0.2, 0.30000000000000004]},
      {"id": 1, "parent": 0, "xyz": [1e0, 0, 0]}, {"id": 0, "xyz": [0,0,0]} ], "root": 0, "label": "x"})";
  const auto canon = serialize_tree_json(parse_tree_json(messy));
  CHECK(canon ==
        R"({"root":0,"label":"x","nodes":[{"id":0,"parent":null,"xyz":[0,0,0],"attrs":[]},{"id":1,"parent":0,"xyz":[1,0,0],"attrs":[]},{"id":2,"parent":1,"xyz":[0.1,0.2,0.30000000000000004],"attrs":[]}]})");
}

TEST_CASE("manifest round trip and validation") {
  DatasetManifest m;
  m.entries = {{"a.json", 1.0}, {"b.swc", std::string("pyramidal")}, {"c.json", {}}};
  m.task_kind = TaskKind::Classification;
  m.split_seed = 9;
  const auto back = parse_manifest_json(serialize_manifest_json(m));
  CHECK(back.entries.size() == 3);
  CHECK(back.entries[1].target == Label{std::string("pyramidal")});
  CHECK(back.split_seed == 9);
  m.split_ratios = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("ancestor relation is a strict partial order") {
  const auto t = random_tree(60, 3);
  for (int a = 0; a < 60; ++a) {
    CHECK_FALSE(t.is_proper_descendant(a, a));
    for (int b = 0; b < 60; ++b) {
      bool walk = false;
      for (int v = t.parent(b); v != kNone; v = t.parent(v)) walk |= v == a;
      CHECK(t.is_proper_descendant(b, a) == walk);
      if (t.is_proper_descendant(b, a)) CHECK_FALSE(t.is_proper_descendant(a, b));
    }
  }
}

TEST_CASE("branch enumeration on a path") {
  const auto t = make_tree({-1, 0, 1, 2}, {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {1, 1, 1}});
  const auto bs = enumerate_branches(t);
  REQUIRE(bs.of(0).size() == 1);
  CHECK(bs.of(0)[0] == Branch3{0, 1, 2, 3, 3});
  REQUIRE(bs.of(1).size() == 1);
  CHECK(bs.of(1)[0] == Branch3{1, 2, 3, kNone, 2});
  REQUIRE(bs.of(2).size() == 1);
  CHECK(bs.of(2)[0] == Branch3{2, 3, kNone, kNone, 1});
  CHECK(bs.of(3).empty());
}

TEST_CASE("perfect binary tree of depth three has eight full branches") {
  std::vector<int> parents{-1};
  std::vector<Vec3> pos{{0, 0, 0}};
  for (int v = 1; v < 15; ++v) {
    parents.push_back((v - 1) / 2);
    pos.push_back(pos[static_cast<std::size_t>((v - 1) / 2)] + Vec3{1.0, 0.3 * v, 0.1 * (v % 3)});
  }
  const auto bs = enumerate_branches(make_tree(parents, pos));
  CHECK(bs.full_length_count() == 8);
  CHECK(bs.of(0).size() == 8);
}

TEST_CASE("branch count law on random trees") {
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto t = random_tree(50 + 37 * s, s);
    const auto depth = bfs_depths(t);
    std::size_t deep = 0;
    for (int d : depth) deep += d >= 3;
    const auto bs = enumerate_branches(t);
    CHECK(bs.full_length_count() == deep);
    CHECK(bs.full_length_count() <= t.size());
    // short branches only end at leaves
    for (const auto& b : bs.branches) {
      const int last = b.valid_len == 1 ? b.j : b.valid_len == 2 ? b.k : b.p;
      if (b.valid_len < 3) CHECK(t.children(last).empty());
    }
  }
}

TEST_CASE("spatial targets") {
  const auto two = make_tree({-1, 0}, {{0, 0, 0}, {0, 0, 5}});
  auto tg = compute_targets(two);
  CHECK(tg.diameter == doctest::Approx(5.0));
  CHECK(tg.radius == doctest::Approx(5.0));
  const auto line = make_tree({-1, 0, 1}, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  tg = compute_targets(line);
  CHECK(tg.diameter == doctest::Approx(2.0));
  CHECK(tg.radius == doctest::Approx(1.0));
  CHECK(compute_targets(make_tree({-1}, {{1, 2, 3}})).diameter == 0.0);

  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto t = random_tree(50, 100 + s);
    double dia = 0.0, rad = 1e300;
    for (int a = 0; a < 50; ++a) {
      double ecc = 0.0;
      for (int b = 0; b < 50; ++b) ecc = std::max(ecc, norm(t.position(a) - t.position(b)));
      dia = std::max(dia, ecc);
      rad = std::min(rad, ecc);
    }
    const auto serial = compute_targets(t, Exec::Serial);
    const auto par = compute_targets(t, Exec::Parallel);
    CHECK(serial.diameter == doctest::Approx(dia).epsilon(1e-12));
    CHECK(serial.radius == doctest::Approx(rad).epsilon(1e-12));
    CHECK(par.diameter == serial.diameter);
    CHECK(par.radius == serial.radius);
  }
}

TEST_CASE("generator: single path and determinism") {
  GeneratorConfig cfg;
  cfg.count = 1;
  cfg.min_depth = 3;
  cfg.max_depth = 3;
  cfg.branch_probs = {1.0};
  const auto one = generate_synthetic(cfg, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0].tree.size() == 4);
  CHECK(one[0].tree.max_depth() == 3);

  GeneratorConfig big;
  big.count = 30;
  const auto a = generate_synthetic(big, 77);
  const auto b = generate_synthetic(big, 77);
  std::string sa, sb;
  for (const auto& s : a) sa += serialize_tree_json(s.tree);
  for (const auto& s : b) sb += serialize_tree_json(s.tree);
  CHECK(sa == sb);
  const auto c = generate_synthetic(big, 78);
  CHECK(serialize_tree_json(c[0].tree) != serialize_tree_json(a[0].tree));
}

TEST_CASE("generator rejects infeasible configs") {
  GeneratorConfig cfg;
  cfg.min_depth = 2;
  cfg.max_depth = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ssl_intended = false;
  CHECK_NOTHROW(cfg.validate());
  GeneratorConfig bad;
  bad.branch_probs = {0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("generator regression targets match compute_targets") {
  GeneratorConfig cfg;
  cfg.count = 6;
  cfg.mode = SyntheticMode::Regression;
  for (const auto& s : generate_synthetic(cfg, 4)) {
    const auto tg = compute_targets(s.tree, Exec::Serial);
    CHECK(s.targets.at("spatial_diameter") == tg.diameter);
    CHECK(s.targets.at("spatial_radius") == tg.radius);
    CHECK(std::get<double>(s.tree.label()) == tg.diameter);
  }
}

TEST_CASE("depth-vs-bend statistic separates the two classes") {
  GeneratorConfig cfg;
  cfg.count = 200;
  const auto samples = generate_synthetic(cfg, 2024);
  // Slope of bend angle (angle between parent edge and child edge) against depth.
  std::vector<double> slope;
  std::vector<int> cls;
  for (const auto& s : samples) {
    const auto& t = s.tree;
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    for (int v = 0; v < static_cast<int>(t.size()); ++v) {
      const int p = t.parent(v);
      if (p == kNone || t.parent(p) == kNone) continue;
      const Vec3 a = t.position(p) - t.position(t.parent(p));
      const Vec3 b = t.position(v) - t.position(p);
      const double bend = std::acos(std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0));
      const double d = t.depth(v);
      sx += d;
      sy += bend;
      sxx += d * d;
      sxy += d * bend;
      n += 1;
    }
    slope.push_back((n * sxy - sx * sy) / (n * sxx - sx * sx));
    cls.push_back(static_cast<int>(s.targets.at("class")));
  }
  // class 0 bends less with depth: negative slope
  int correct = 0;
  for (std::size_t i = 0; i < slope.size(); ++i) correct += (slope[i] < -0.033) == (cls[i] == 0);
  CHECK(static_cast<double>(correct) / static_cast<double>(slope.size()) > 0.9);
}
