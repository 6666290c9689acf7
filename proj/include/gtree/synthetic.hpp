#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gtree/tree.hpp"

namespace gtree {

enum class SyntheticMode { Unlabeled, Classification, Regression };

struct GeneratorConfig {
  std::size_t count = 200;
  SyntheticMode mode = SyntheticMode::Classification;
  int min_depth = 11;
  int max_depth = 13;
  /// Probability of 1, 2, 3, ... children for each internal node below the stem.
  std::vector<double> branch_probs{0.6, 0.4};
  /// Number of top levels that always have exactly one child.
  int stem_length = 2;
  double step_mean = 1.0;
  /// Multiplier applied to the mean step length per level of depth.
  double step_decay = 0.95;
  double step_jitter = 0.15;
  /// Bend angle range in radians (angle between consecutive edge directions).
  double bend_high = 1.0;
  double bend_low = 0.2;
  double bend_noise = 0.1;
  /// When false both classes are drawn from the same process (null control).
  bool class_coupling = true;
  /// Stop growing once a tree has this many nodes.
  std::size_t max_nodes = 400;
  /// Grow every tree to exactly this many nodes, ignoring the depth range.
  std::optional<std::size_t> exact_nodes;
  /// Reject configurations that cannot yield depth >= 3 trees.
  bool ssl_intended = true;

  /// Throws ConfigError on infeasible settings.
  void validate() const;
};

struct SyntheticSample {
  GeometricTree tree;
  std::map<std::string, double> targets;
};

/// Deterministic in (config, seed). In classification mode even indices are
/// class 0 (bend angle shrinks with depth) and odd indices are class 1
/// (depth-independent bend angle); the tree label holds the class index.
/// Regression mode labels each tree with its spatial diameter and also
/// records spatial_radius in `targets`.
std::vector<SyntheticSample> generate_synthetic(const GeneratorConfig& config, std::uint64_t seed);

/// Independent child seed for stream `stream` (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// One tree of the given class; exposed for benchmarks and tests.
GeometricTree grow_tree(const GeneratorConfig& config, std::uint64_t seed, int tree_class);

}  // namespace gtree
