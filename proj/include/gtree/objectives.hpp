#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gtree/ad/graph.hpp"
#include "gtree/io.hpp"
#include "gtree/model.hpp"
#include "gtree/tree.hpp"

namespace gtree {

/// Gaussian radial bases exp(-gamma (d - mu_k)^2).
struct RadialBasisConfig {
  std::vector<double> mu;
  double gamma = 1.0;

  int K() const { return static_cast<int>(mu.size()); }
  /// Throws ConfigError unless K >= 2, mu strictly increasing and gamma > 0.
  void validate() const;

  /// K centers on [0, d_max] with gamma = 1 / (2 spacing^2).
  static RadialBasisConfig evenly_spaced(int K, double d_max);
};

nlohmann::json to_json(const RadialBasisConfig& basis);
RadialBasisConfig radial_basis_from_json(const nlohmann::json& j);

/// 95th percentile of parent-child edge lengths over the given trees.
double edge_length_quantile(std::span<const GeometricTree* const> trees, double q = 0.95);

struct RadialHistogram {
  std::vector<double> weights;
};

RadialHistogram rbf_expand(std::span<const double> distances, const RadialBasisConfig& basis);
RadialHistogram child_distance_histogram(const GeometricTree& tree, int node, const RadialBasisConfig& basis);
/// Sum of child-distance histograms over the node and all of its ancestors.
RadialHistogram ancestor_context(const GeometricTree& tree, int node, const RadialBasisConfig& basis);

/// 1-D earth mover's distance between unit-normalized histograms with the
/// bin centers as ground positions. A zero-mass histogram counts as uniform.
double emd_1d(const RadialHistogram& p, const RadialHistogram& q, const RadialBasisConfig& basis);

/// Row-wise EMD between predicted distributions (rows sum to 1) and fixed
/// target distributions; returns an n x 1 column.
ad::Var emd_rows(ad::Var predicted, const ad::Tensor& target, const RadialBasisConfig& basis);

/// Per-tree constants for the subtree-growth objective.
struct GenerativeTargets {
  std::vector<int> internal;  // non-leaf node indices
  ad::Tensor context;         // internal x K ancestor contexts
  ad::Tensor target;          // internal x K normalized child histograms
};

GenerativeTargets prepare_generative_targets(const GeometricTree& tree, const RadialBasisConfig& basis);

struct GenerativeLoss {
  ad::Var loss;
  /// Set when the tree has no internal node; the loss is then a constant 0.
  bool vacuous = false;
};

GenerativeLoss generative_loss(ad::Graph& g, ad::Var node_embeddings, const GenerativeTargets& targets,
                               const ModelParams& model, const RadialBasisConfig& basis);

enum class OrderReduction { Sum, SquaredNorm };

struct OrderLossConfig {
  double margin = 1.0;
  int pairs_per_tree = 32;
  OrderReduction reduction = OrderReduction::Sum;

  void validate() const;
};

nlohmann::json to_json(const OrderLossConfig& c);
OrderLossConfig order_loss_config_from_json(const nlohmann::json& j);

using NodePair = std::pair<int, int>;

struct OrderPairs {
  std::vector<NodePair> positives;  // (ancestor, proper descendant)
  std::vector<NodePair> negatives;  // (i, j) with j not below i
};

/// Uniform draws (with replacement) of up to M pairs of each kind. When a
/// tree has at most M pairs of a kind, all of them are returned.
OrderPairs sample_order_pairs(const GeometricTree& tree, const OrderLossConfig& config, std::uint64_t seed);

struct OrderLoss {
  ad::Var total;
  ad::Var positive;  // already divided by the pair count
  ad::Var negative;
};

OrderLoss order_loss(ad::Var embeddings, const OrderPairs& pairs, const OrderLossConfig& config);

struct SslConfig {
  OrderLossConfig order;
  double generative_weight = 1.0;
  double order_weight = 1.0;
};

struct SslLoss {
  ad::Var total;
  ad::Var generative;
  ad::Var order;
  bool vacuous_generative = false;
};

SslLoss ssl_loss(ad::Graph& g, const TreeInputs& in, const GenerativeTargets& targets, const OrderPairs& pairs,
                 const ModelParams& model, const RadialBasisConfig& basis, const SslConfig& config);

/// Classification: softmax cross-entropy of each score row against its class
/// index. Regression: absolute error. Averaged over rows. Throws
/// ContractError for out-of-range or non-integer class labels.
ad::Var supervised_loss(ad::Var scores, std::span<const double> targets, TaskKind task);

}  // namespace gtree
