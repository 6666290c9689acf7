#include "gtree/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gtree/errors.hpp"

namespace gtree {

using nlohmann::json;

void RadialBasisConfig::validate() const {
  if (mu.size() < 2) throw ConfigError("radial basis needs at least two centers");
  for (std::size_t k = 0; k < mu.size(); ++k) {
    if (!std::isfinite(mu[k])) throw ConfigError("radial basis centers must be finite");
    if (k > 0 && !(mu[k] > mu[k - 1])) throw ConfigError("radial basis centers must be strictly increasing");
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("radial basis gamma must be positive");
}

RadialBasisConfig RadialBasisConfig::evenly_spaced(int K, double d_max) {
  if (K < 2) throw ConfigError("radial basis needs at least two centers");
  if (!(d_max > 0.0) || !std::isfinite(d_max)) throw ConfigError("radial basis range must be positive");
  RadialBasisConfig b;
  const double step = d_max / (K - 1);
  b.mu.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) b.mu[static_cast<std::size_t>(k)] = step * k;
  b.gamma = 1.0 / (2.0 * step * step);
  return b;
}

json to_json(const RadialBasisConfig& basis) {
  return {{"K", basis.K()}, {"mu", basis.mu}, {"gamma", basis.gamma}};
}

RadialBasisConfig radial_basis_from_json(const json& j) {
  RadialBasisConfig b;
  try {
    if (j.contains("mu")) {
      b.mu = j.at("mu").get<std::vector<double>>();
      b.gamma = j.at("gamma").get<double>();
    } else {
      b = RadialBasisConfig::evenly_spaced(j.value("K", 16), j.at("d_max").get<double>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad radial basis config: ") + e.what());
  }
  b.validate();
  return b;
}

double edge_length_quantile(std::span<const GeometricTree* const> trees, double q) {
  std::vector<double> lengths;
  for (const auto* t : trees)
    for (int v = 0; v < static_cast<int>(t->size()); ++v)
      if (t->parent(v) != kNone) lengths.push_back(norm(t->position(v) - t->position(t->parent(v))));
  if (lengths.empty()) throw ConfigError("no edges to calibrate the radial basis");
  std::sort(lengths.begin(), lengths.end());
  const double pos = q * static_cast<double>(lengths.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, lengths.size() - 1);
  return lengths[lo] + (pos - static_cast<double>(lo)) * (lengths[hi] - lengths[lo]);
}

RadialHistogram rbf_expand(std::span<const double> distances, const RadialBasisConfig& basis) {
  RadialHistogram h{std::vector<double>(basis.mu.size(), 0.0)};
  for (double d : distances)
    for (std::size_t k = 0; k < basis.mu.size(); ++k) {
      const double t = d - basis.mu[k];
      h.weights[k] += std::exp(-basis.gamma * t * t);
    }
  return h;
}

RadialHistogram child_distance_histogram(const GeometricTree& tree, int node, const RadialBasisConfig& basis) {
  std::vector<double> d;
  for (int c : tree.children(node)) d.push_back(norm(tree.position(c) - tree.position(node)));
  return rbf_expand(d, basis);
}

RadialHistogram ancestor_context(const GeometricTree& tree, int node, const RadialBasisConfig& basis) {
  RadialHistogram acc{std::vector<double>(basis.mu.size(), 0.0)};
  for (int v = node; v != kNone; v = tree.parent(v)) {
    const auto h = child_distance_histogram(tree, v, basis);
    for (std::size_t k = 0; k < acc.weights.size(); ++k) acc.weights[k] += h.weights[k];
  }
  return acc;
}

namespace {

std::vector<double> normalized(const std::vector<double>& w) {
  double mass = 0.0;
  for (double x : w) mass += x;
  std::vector<double> out(w.size());
  if (!(mass > 0.0)) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(w.size()));
  } else {
    for (std::size_t k = 0; k < w.size(); ++k) out[k] = w[k] / mass;
  }
  return out;
}

}  // namespace

double emd_1d(const RadialHistogram& p, const RadialHistogram& q, const RadialBasisConfig& basis) {
  const auto K = basis.mu.size();
  if (p.weights.size() != K || q.weights.size() != K) throw ShapeError("histogram width does not match basis");
  const auto pn = normalized(p.weights);
  const auto qn = normalized(q.weights);
  double cp = 0.0, cq = 0.0, cost = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    cp += pn[k];
    cq += qn[k];
    cost += std::abs(cp - cq) * (basis.mu[k + 1] - basis.mu[k]);
  }
  return cost;
}

ad::Var emd_rows(ad::Var predicted, const ad::Tensor& target, const RadialBasisConfig& basis) {
  const auto K = basis.mu.size();
  const auto& pv = predicted.value();
  if (pv.cols() != K || !pv.same_shape(target)) throw ShapeError("emd_rows: shape mismatch");
  const auto n = pv.rows();
  // cdf[:, k] = sum_{a <= k} row[a] for k < K-1; the last cdf entry is 1 on both sides.
  ad::Tensor upper = ad::Tensor::matrix(K, K - 1);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t k = a; k + 1 < K; ++k) upper.at(a, k) = 1.0;
  ad::Tensor neg_target_cdf = ad::Tensor::matrix(n, K - 1);
  ad::Tensor spacing = ad::Tensor::matrix(n, K - 1);
  for (std::size_t r = 0; r < n; ++r) {
    double c = 0.0;
    for (std::size_t k = 0; k + 1 < K; ++k) {
      c += target.at(r, k);
      neg_target_cdf.at(r, k) = -c;
      spacing.at(r, k) = basis.mu[k + 1] - basis.mu[k];
    }
  }
  ad::Graph& g = *predicted.graph;
  ad::Var cdf = ad::matmul(predicted, g.constant(std::move(upper)));
  ad::Var gap = ad::abs(ad::add_const(cdf, neg_target_cdf));
  return ad::sum_cols(ad::mul_const(gap, spacing));
}

GenerativeTargets prepare_generative_targets(const GeometricTree& tree, const RadialBasisConfig& basis) {
  basis.validate();
  const auto N = tree.size();
  const auto K = basis.mu.size();
  std::vector<std::vector<double>> hist(N), ctx(N);
  for (int v = 0; v < static_cast<int>(N); ++v) hist[static_cast<std::size_t>(v)] = child_distance_histogram(tree, v, basis).weights;
  for (int v : tree.bfs_order()) {
    auto& c = ctx[static_cast<std::size_t>(v)];
    c = hist[static_cast<std::size_t>(v)];
    if (tree.parent(v) != kNone) {
      const auto& up = ctx[static_cast<std::size_t>(tree.parent(v))];
      for (std::size_t k = 0; k < K; ++k) c[k] += up[k];
    }
  }
  GenerativeTargets t;
  for (int v = 0; v < static_cast<int>(N); ++v)
    if (!tree.children(v).empty()) t.internal.push_back(v);
  t.context = ad::Tensor::matrix(t.internal.size(), K);
  t.target = ad::Tensor::matrix(t.internal.size(), K);
  for (std::size_t r = 0; r < t.internal.size(); ++r) {
    const auto v = static_cast<std::size_t>(t.internal[r]);
    const auto target = normalized(hist[v]);
    for (std::size_t k = 0; k < K; ++k) {
      t.context.at(r, k) = ctx[v][k];
      t.target.at(r, k) = target[k];
    }
  }
  return t;
}

GenerativeLoss generative_loss(ad::Graph& g, ad::Var node_embeddings, const GenerativeTargets& targets,
                               const ModelParams& model, const RadialBasisConfig& basis) {
  if (basis.K() != model.config.num_rbf) throw ShapeError("radial basis size does not match the generative head");
  if (targets.internal.empty()) return {g.constant(ad::Tensor::scalar(0.0)), true};
  ad::Var h = ad::gather_rows(node_embeddings, targets.internal);
  ad::Var x = ad::concat_cols({h, g.constant(targets.context)});
  ad::Var probs = ad::softmax_rows(ad::mlp_forward(generative_spec(model.config), model.params, "gen", x));
  return {ad::mean(emd_rows(probs, targets.target, basis)), false};
}

void OrderLossConfig::validate() const {
  if (!(margin > 0.0) || !std::isfinite(margin)) throw ConfigError("order margin must be positive");
  if (pairs_per_tree < 1) throw ConfigError("pairs_per_tree must be at least 1");
}

json to_json(const OrderLossConfig& c) {
  return {{"margin", c.margin},
          {"pairs_per_tree", c.pairs_per_tree},
          {"reduction", c.reduction == OrderReduction::Sum ? "sum" : "squared_norm"}};
}

OrderLossConfig order_loss_config_from_json(const json& j) {
  OrderLossConfig c;
  try {
    c.margin = j.value("margin", c.margin);
    c.pairs_per_tree = j.value("pairs_per_tree", c.pairs_per_tree);
    const auto r = j.value("reduction", std::string("sum"));
    if (r == "sum") c.reduction = OrderReduction::Sum;
    else if (r == "squared_norm") c.reduction = OrderReduction::SquaredNorm;
    else throw ConfigError("unknown order reduction '" + r + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad order loss config: ") + e.what());
  }
  c.validate();
  return c;
}

OrderPairs sample_order_pairs(const GeometricTree& tree, const OrderLossConfig& config, std::uint64_t seed) {
  config.validate();
  OrderPairs out;
  const int N = static_cast<int>(tree.size());
  if (N < 2) return out;
  const auto M = static_cast<std::size_t>(config.pairs_per_tree);
  std::mt19937_64 rng(seed);

  std::size_t n_pos = 0;
  std::vector<double> depth_weight(static_cast<std::size_t>(N));
  for (int v = 0; v < N; ++v) {
    n_pos += static_cast<std::size_t>(tree.depth(v));
    depth_weight[static_cast<std::size_t>(v)] = tree.depth(v);
  }
  const std::size_t n_neg = static_cast<std::size_t>(N) * static_cast<std::size_t>(N - 1) - n_pos;

  if (n_pos <= M) {
    for (int v = 0; v < N; ++v)
      for (int a = tree.parent(v); a != kNone; a = tree.parent(a)) out.positives.emplace_back(a, v);
  } else {
    // Picking the descendant with weight depth(v), then one of its ancestors
    // uniformly, is uniform over ancestor-descendant pairs.
    std::discrete_distribution<int> pick(depth_weight.begin(), depth_weight.end());
    for (std::size_t s = 0; s < M; ++s) {
      const int v = pick(rng);
      int up = std::uniform_int_distribution<int>(1, tree.depth(v))(rng);
      int a = v;
      while (up-- > 0) a = tree.parent(a);
      out.positives.emplace_back(a, v);
    }
  }

  if (n_neg <= M) {
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        if (i != j && !tree.is_proper_descendant(j, i)) out.negatives.emplace_back(i, j);
  } else {
    std::uniform_int_distribution<int> node(0, N - 1);
    while (out.negatives.size() < M) {
      const int i = node(rng);
      const int j = node(rng);
      if (i != j && !tree.is_proper_descendant(j, i)) out.negatives.emplace_back(i, j);
    }
  }
  return out;
}

OrderLoss order_loss(ad::Var embeddings, const OrderPairs& pairs, const OrderLossConfig& config) {
  config.validate();
  ad::Graph& g = *embeddings.graph;
  const std::size_t count = pairs.positives.size() + pairs.negatives.size();
  OrderLoss out;
  out.positive = g.constant(ad::Tensor::scalar(0.0));
  out.negative = g.constant(ad::Tensor::scalar(0.0));
  if (count == 0) {
    out.total = g.constant(ad::Tensor::scalar(0.0));
    return out;
  }
  const double inv = 1.0 / static_cast<double>(count);
  auto split = [](const std::vector<NodePair>& ps) {
    std::vector<int> a, b;
    for (const auto& [x, y] : ps) {
      a.push_back(x);
      b.push_back(y);
    }
    return std::pair{a, b};
  };
  if (!pairs.positives.empty()) {
    const auto [anc, desc] = split(pairs.positives);
    ad::Var excess = ad::relu(ad::sub(ad::gather_rows(embeddings, desc), ad::gather_rows(embeddings, anc)));
    ad::Var term = config.reduction == OrderReduction::Sum ? ad::sum(excess) : ad::sum(ad::square(excess));
    out.positive = ad::scale(term, inv);
  }
  if (!pairs.negatives.empty()) {
    const auto [a, b] = split(pairs.negatives);
    ad::Var d2 = ad::sum_cols(ad::square(ad::sub(ad::gather_rows(embeddings, a), ad::gather_rows(embeddings, b))));
    ad::Var hinge = ad::relu(ad::add_const(ad::scale(d2, -1.0), ad::Tensor::matrix(a.size(), 1, config.margin)));
    out.negative = ad::scale(ad::sum(hinge), inv);
  }
  out.total = ad::add(out.positive, out.negative);
  return out;
}

SslLoss ssl_loss(ad::Graph& g, const TreeInputs& in, const GenerativeTargets& targets, const OrderPairs& pairs,
                 const ModelParams& model, const RadialBasisConfig& basis, const SslConfig& config) {
  const Encoding enc = encode(g, in, model);
  const auto gen = generative_loss(g, enc.final_nodes(), targets, model, basis);
  const auto ord = order_loss(enc.final_nodes(), pairs, config.order);
  SslLoss out;
  out.generative = gen.loss;
  out.order = ord.total;
  out.vacuous_generative = gen.vacuous;
  out.total = ad::add(ad::scale(gen.loss, config.generative_weight), ad::scale(ord.total, config.order_weight));
  return out;
}

ad::Var supervised_loss(ad::Var scores, std::span<const double> targets, TaskKind task) {
  const auto& s = scores.value();
  const auto n = s.rows();
  if (n != targets.size()) throw ShapeError("supervised_loss: one target per score row expected");
  if (n == 0) throw ShapeError("supervised_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(n);
  if (task == TaskKind::Regression) {
    if (s.cols() != 1) throw ShapeError("regression scores must have one column");
    ad::Tensor neg(std::vector<std::size_t>{n, 1});
    for (std::size_t r = 0; r < n; ++r) neg[r] = -targets[r];
    return ad::scale(ad::sum(ad::abs(ad::add_const(scores, neg))), inv);
  }
  const auto C = s.cols();
  ad::Tensor onehot = ad::Tensor::matrix(n, C);
  for (std::size_t r = 0; r < n; ++r) {
    const double y = targets[r];
    if (!(y >= 0.0) || y != std::floor(y) || y >= static_cast<double>(C))
      throw ContractError("class label " + format_real(y) + " out of range for " + std::to_string(C) + " classes");
    onehot.at(r, static_cast<std::size_t>(y)) = 1.0;
  }
  return ad::scale(ad::sum(ad::mul_const(ad::log_softmax_rows(scores), onehot)), -inv);
}

}  // namespace gtree
