#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "gtree/ad/graph.hpp"
#include "gtree/objectives.hpp"
#include "gtree/tree.hpp"

namespace gtree::testing {

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v{g(rng), g(rng), g(rng)};
  return v / norm(v);
}

/// Random recursive tree: node v attaches to a uniform earlier node.
inline GeometricTree random_tree(std::size_t n, std::uint64_t seed, std::size_t attr_dim = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> len(0.5, 1.5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<NodeRecord> nodes(n);
  for (std::size_t v = 0; v < n; ++v) {
    nodes[v].id = static_cast<std::int64_t>(v);
    nodes[v].attrs.resize(attr_dim);
    for (auto& a : nodes[v].attrs) a = u(rng);
    if (v == 0) {
      nodes[v].position = {u(rng), u(rng), u(rng)};
      continue;
    }
    const auto p = std::uniform_int_distribution<std::size_t>(0, v - 1)(rng);
    nodes[v].parent_id = static_cast<std::int64_t>(p);
    nodes[v].position = nodes[p].position + len(rng) * random_unit(rng);
  }
  return GeometricTree::from_nodes(std::move(nodes));
}

/// Tree from parent indices (-1 for the root) and positions.
inline GeometricTree make_tree(const std::vector<int>& parents, const std::vector<Vec3>& pos) {
  std::vector<NodeRecord> nodes;
  for (std::size_t v = 0; v < parents.size(); ++v) {
    NodeRecord r;
    r.id = static_cast<std::int64_t>(v);
    if (parents[v] >= 0) r.parent_id = parents[v];
    r.position = pos[v];
    nodes.push_back(r);
  }
  return GeometricTree::from_nodes(std::move(nodes));
}

struct GradCheck {
  double max_rel = 0.0;
  int checked = 0;
  int skipped = 0;
};

using LossBuilder = std::function<ad::Var(ad::Graph&, const ad::ParamSet&)>;

/// Central differences against reverse mode on `probes` random entries of
/// every parameter tensor. Probes whose perturbed evaluations switch a
/// piecewise branch (relu, abs, max) are skipped and counted.
/// Relative error is |a - f| / max(|a|, |f|, floor).
inline GradCheck grad_check(const ad::ParamSet& params, const LossBuilder& build, std::uint64_t seed, int probes = 6,
                            double h = 1e-5, double floor = 1e-5) {
  std::mt19937_64 rng(seed);
  ad::Graph g;
  g.set_track_kinks(true);
  g.backward(build(g, params));
  const auto grads = g.parameter_grads();
  const auto base_sig = g.kink_signature();

  auto eval = [&](const ad::ParamSet& p, std::uint64_t& sig) {
    ad::Graph e;
    e.set_track_kinks(true);
    const double v = build(e, p).value().item();
    sig = e.kink_signature();
    return v;
  };

  GradCheck out;
  ad::ParamSet work = params;
  for (auto& [name, tensor] : work) {
    const auto n = tensor.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(n, static_cast<std::size_t>(probes)));
    const auto git = grads.find(name);
    for (auto e : idx) {
      const double orig = tensor[e];
      std::uint64_t s_plus = 0, s_minus = 0;
      tensor[e] = orig + h;
      const double lp = eval(work, s_plus);
      tensor[e] = orig - h;
      const double lm = eval(work, s_minus);
      tensor[e] = orig;
      if (s_plus != base_sig || s_minus != base_sig) {
        ++out.skipped;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double an = git == grads.end() ? 0.0 : git->second[e];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
      out.max_rel = std::max(out.max_rel, rel);
      ++out.checked;
    }
  }
  return out;
}

// Transport cost between two unit-mass histograms by successive shortest
// paths on the full bipartite network; the ground cost is |x_a - x_b| but
// the solver treats it as an arbitrary matrix.
inline double transport_oracle(std::vector<double> p, std::vector<double> q, const std::vector<double>& x) {
  const int K = static_cast<int>(x.size());
  const int S = 2 * K, T = 2 * K + 1, V = 2 * K + 2;
  struct Edge {
    int to;
    double cap, cost;
  };
  std::vector<Edge> edges;
  std::vector<std::vector<int>> adj(V);
  auto add = [&](int a, int b, double cap, double cost) {
    adj[a].push_back(static_cast<int>(edges.size()));
    edges.push_back({b, cap, cost});
    adj[b].push_back(static_cast<int>(edges.size()));
    edges.push_back({a, 0.0, -cost});
  };
  for (int a = 0; a < K; ++a) add(S, a, p[a], 0.0);
  for (int b = 0; b < K; ++b) add(K + b, T, q[b], 0.0);
  for (int a = 0; a < K; ++a)
    for (int b = 0; b < K; ++b) add(a, K + b, 10.0, std::abs(x[a] - x[b]));
  double total = 0.0, flow = 0.0;
  constexpr double kTiny = 1e-15;
  while (flow < 1.0 - 1e-13) {
    std::vector<double> dist(V, std::numeric_limits<double>::infinity());
    std::vector<int> via(V, -1);
    dist[S] = 0.0;
    for (int round = 0; round < V; ++round) {
      bool changed = false;
      for (int u = 0; u < V; ++u) {
        if (!std::isfinite(dist[u])) continue;
        for (int e : adj[u]) {
          if (edges[e].cap <= kTiny) continue;
          const double nd = dist[u] + edges[e].cost;
          if (nd < dist[edges[e].to] - 1e-15) {
            dist[edges[e].to] = nd;
            via[edges[e].to] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (!std::isfinite(dist[T])) break;
    double push = std::numeric_limits<double>::infinity();
    for (int v = T; v != S; v = edges[via[v] ^ 1].to) push = std::min(push, edges[via[v]].cap);
    for (int v = T; v != S; v = edges[via[v] ^ 1].to) {
      edges[via[v]].cap -= push;
      edges[via[v] ^ 1].cap += push;
    }
    total += push * dist[T];
    flow += push;
  }
  return total;
}

inline std::vector<double> unit(std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

inline std::vector<double> random_hist(std::mt19937_64& rng, int K) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(K);
  for (double& v : w) v = u(rng) < 0.2 ? 0.0 : u(rng);
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) w[0] = 1.0;
  return w;
}

inline RadialBasisConfig random_basis(std::mt19937_64& rng, int K) {
  std::uniform_real_distribution<double> gap(0.1, 2.0);
  RadialBasisConfig b;
  double at = gap(rng);
  for (int k = 0; k < K; ++k) {
    b.mu.push_back(at);
    at += gap(rng);
  }
  b.gamma = 1.5;
  return b;
}

}  // namespace gtree::testing
