#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gtree/errors.hpp"
#include "gtree/geometry.hpp"
#include "gtree/model.hpp"
#include "gtree/objectives.hpp"
#include "support.hpp"

using namespace gtree;
using gtree::testing::grad_check;
using gtree::testing::make_tree;
using gtree::testing::random_tree;

namespace {

using Row = std::vector<double>;
using Rows = std::vector<Row>;

// Plain-loop MLP over named parameters.
Row run_mlp(const ad::MlpSpec& spec, const ad::ParamSet& p, const std::string& prefix, Row x) {
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const auto& w = p.at(prefix + ".w" + std::to_string(l));
    const auto& b = p.at(prefix + ".b" + std::to_string(l));
    Row y(w.cols());
    for (std::size_t o = 0; o < w.cols(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w.at(i, o);
      const bool last = l + 1 == spec.layers();
      if (!last || spec.activate_output) {
        if (spec.activation == ad::Activation::ReLU) s = std::max(0.0, s);
        if (spec.activation == ad::Activation::Tanh) s = std::tanh(s);
      }
      y[o] = s;
    }
    x = std::move(y);
  }
  return x;
}

// Forward pass written straight from the message-passing definition: every
// descending path of up to three edges from i, cut short only at leaves.
Row oracle_tree_vector(const GeometricTree& t, const ModelParams& m) {
  const auto& enc = m.config.encoder;
  const auto D = static_cast<std::size_t>(enc.hidden_dim);
  const int n = static_cast<int>(t.size());
  Rows h(n, Row(D));
  for (int v = 0; v < n; ++v) {
    if (enc.attr_dim > 0) {
      h[v] = run_mlp(ad::MlpSpec{{enc.attr_dim, enc.hidden_dim}, enc.activation, false}, m.params, "embed",
                     t.nodes()[v].attrs);
    } else {
      const auto& c = m.params.at("embed.const");
      h[v].assign(c.data(), c.data() + D);
    }
  }
  for (int l = 0; l < enc.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Rows next(n);
    for (int i = 0; i < n; ++i) {
      std::vector<std::array<int, 4>> paths;
      for (int j : t.children(i)) {
        if (t.children(j).empty()) {
          paths.push_back({i, j, kNone, kNone});
          continue;
        }
        for (int k : t.children(j)) {
          if (t.children(k).empty()) {
            paths.push_back({i, j, k, kNone});
            continue;
          }
          for (int p : t.children(k)) paths.push_back({i, j, k, p});
        }
      }
      Row agg(D, 0.0);
      if (enc.agg == Aggregation::Max && !paths.empty()) agg.assign(D, -1e300);
      for (const auto& path : paths) {
        const int len = path[3] != kNone ? 3 : path[2] != kNone ? 2 : 1;
        auto pos = [&](int v) { return v == kNone ? Vec3{} : t.position(v); };
        const auto f = extract_branch_features(pos(path[0]), pos(path[1]), pos(path[2]), pos(path[3]), len);
        Row geo_in(12);
        const auto vals = f.values();
        for (int q = 0; q < 6; ++q) {
          geo_in[q] = f.mask[q] ? vals[q] : 0.0;
          geo_in[6 + q] = f.mask[q] ? 1.0 : 0.0;
        }
        const Row geo = run_mlp(psi_spec(enc), m.params, pre + "psi", geo_in);
        Row cat;
        for (int s = 0; s < 4; ++s) {
          const double a = s == 0 ? 1.0 : enc.alpha[s - 1];
          for (std::size_t d = 0; d < D; ++d) cat.push_back(path[s] == kNone ? 0.0 : a * h[path[s]][d]);
        }
        cat.insert(cat.end(), geo.begin(), geo.end());
        const Row msg = run_mlp(phi_spec(enc), m.params, pre + "phi", cat);
        for (std::size_t d = 0; d < D; ++d) {
          if (enc.agg == Aggregation::Max) agg[d] = std::max(agg[d], msg[d]);
          else agg[d] += msg[d];
        }
      }
      if (enc.agg == Aggregation::Mean && !paths.empty())
        for (double& a : agg) a /= static_cast<double>(paths.size());
      next[i] = run_mlp(sigma_spec(enc), m.params, pre + "sigma", agg);
    }
    h = std::move(next);
  }
  Row out(D, 0.0);
  for (const auto& r : h)
    for (std::size_t d = 0; d < D; ++d) out[d] += r[d];
  if (enc.readout == Readout::Mean)
    for (double& v : out) v /= n;
  return out;
}

double max_abs_diff(const ad::Tensor& a, const Row& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ModelConfig small_config(int hidden = 4, int layers = 2) {
  ModelConfig c;
  c.encoder.hidden_dim = hidden;
  c.encoder.num_layers = layers;
  c.num_rbf = 4;
  return c;
}

// Same tree with node ids remapped by `perm` (perm[old] = new).
GeometricTree relabel(const GeometricTree& t, const std::vector<int>& perm) {
  std::vector<NodeRecord> nodes;
  for (int v = 0; v < static_cast<int>(t.size()); ++v) {
    NodeRecord r = t.nodes()[v];
    r.id = perm[v];
    if (t.parent(v) != kNone) r.parent_id = perm[t.parent(v)];
    nodes.push_back(r);
  }
  std::reverse(nodes.begin(), nodes.end());
  return GeometricTree::from_nodes(std::move(nodes));
}

}  // namespace

TEST_CASE("single node tree gives sigma of zero at every layer") {
  const auto m = init_model(small_config(3, 3), 1);
  const auto t = make_tree({-1}, {{0.5, 1, 2}});
  ad::Graph g;
  const auto e = encode(g, prepare_inputs(t), m);
  REQUIRE(e.layers.size() == 4);
  for (int l = 0; l < 3; ++l) {
    const auto expect = ad::mlp_forward(sigma_spec(m.config.encoder), m.params,
                                        "layer" + std::to_string(l) + ".sigma", ad::Tensor::matrix(1, 3));
    CHECK(e.layers[l + 1].value() == expect);
  }
  CHECK(e.tree_vector.value() == e.layers.back().value());
}

TEST_CASE("alpha zero hides descendant embeddings") {
  auto cfg = small_config(3, 1);
  cfg.encoder.alpha = {0.0, 0.0, 0.0};
  const auto m = init_model(cfg, 2);
  const auto t = random_tree(12, 5);
  const auto in = prepare_inputs(t);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  ad::Tensor h0 = ad::Tensor::matrix(12, 3);
  for (double& v : h0.values()) v = gauss(rng);
  ad::Tensor h1 = h0;
  for (std::size_t r = 1; r < 12; ++r)
    for (std::size_t c = 0; c < 3; ++c) h1.at(r, c) += gauss(rng);
  ad::Graph g;
  const auto a = layer_forward(g, in, g.constant(h0), m, 0).value();
  const auto b = layer_forward(g, in, g.constant(h1), m, 0).value();
  // the root's message sees only its own row and geometry
  for (std::size_t c = 0; c < 3; ++c) CHECK(a.at(0, c) == b.at(0, c));

  cfg.encoder.alpha = {1.0, 0.5, 0.25};
  const auto m2 = init_model(cfg, 2);
  const auto a2 = layer_forward(g, in, g.constant(h0), m2, 0).value();
  const auto b2 = layer_forward(g, in, g.constant(h1), m2, 0).value();
  bool moved = false;
  for (std::size_t c = 0; c < 3; ++c) moved |= a2.at(0, c) != b2.at(0, c);
  CHECK(moved);
}

TEST_CASE("four node path with hand set weights matches loop oracle") {
  ModelConfig cfg;
  cfg.encoder.hidden_dim = 2;
  cfg.encoder.num_layers = 1;
  cfg.encoder.mlp_depth = 1;
  cfg.num_rbf = 2;
  auto m = init_model(cfg, 0);
  int k = 0;
  for (auto& [name, t] : m.params)
    for (double& v : t.values()) v = 0.1 * std::sin(1.0 + k++);
  const auto t = make_tree({-1, 0, 1, 2}, {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {1, 1, 1}});
  const auto got = encode_tree_vector(prepare_inputs(t), m);
  CHECK(max_abs_diff(got, oracle_tree_vector(t, m)) < 1e-10);

  // one branch per internal node, cut short at the leaf
  const auto in = prepare_inputs(t);
  REQUIRE(in.owner.size() == 3);
  CHECK(in.owner == std::vector<int>{0, 1, 2});
  CHECK(in.slot_p == std::vector<int>{3, kNone, kNone});
  CHECK(in.slot_k == std::vector<int>{2, 3, kNone});
}

TEST_CASE("encoder matches loop oracle on random trees") {
  for (auto agg : {Aggregation::Mean, Aggregation::Sum, Aggregation::Max}) {
    for (auto readout : {Readout::Mean, Readout::Sum}) {
      auto cfg = small_config(5, 2);
      cfg.encoder.agg = agg;
      cfg.encoder.readout = readout;
      cfg.encoder.alpha = {0.7, -0.3, 1.2};
      cfg.encoder.attr_dim = 2;
      for (std::uint64_t s = 0; s < 4; ++s) {
        const auto m = init_model(cfg, s);
        const auto t = random_tree(25, 40 + s, 2);
        CHECK(max_abs_diff(encode_tree_vector(prepare_inputs(t), m), oracle_tree_vector(t, m)) < 1e-10);
      }
    }
  }
  auto cfg = small_config(4, 3);
  cfg.encoder.activation = ad::Activation::Tanh;
  cfg.encoder.mlp_depth = 3;
  const auto m = init_model(cfg, 9);
  const auto t = random_tree(30, 77);
  CHECK(max_abs_diff(encode_tree_vector(prepare_inputs(t), m), oracle_tree_vector(t, m)) < 1e-10);
}

TEST_CASE("node relabeling and sibling order leave the tree vector unchanged") {
  const auto m = init_model(small_config(6, 3), 4);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto t = random_tree(40, 200 + s);
    std::vector<int> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(s));
    for (int& p : perm) p = 3 * p + 11;
    const auto a = encode_tree_vector(prepare_inputs(t), m);
    const auto b = encode_tree_vector(prepare_inputs(relabel(t, perm)), m);
    CHECK(max_abs_diff(a, b) < 1e-12);
  }
  // explicit sibling swap: ids of two leaves under the root exchanged
  const std::vector<Vec3> pos{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  const auto t1 = make_tree({-1, 0, 0, 1}, pos);
  const auto t2 = relabel(t1, {0, 2, 1, 3});
  CHECK(max_abs_diff(encode_tree_vector(prepare_inputs(t1), m), encode_tree_vector(prepare_inputs(t2), m)) < 1e-12);
}

TEST_CASE("rigid motions leave the tree vector unchanged") {
  const auto m = init_model(small_config(8, 3), 5);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto t = random_tree(30, 300 + s);
    auto tf = random_rotation(500 + s);
    tf.translation = {u(rng), u(rng), u(rng)};
    worst = std::max(worst, max_abs_diff(encode_tree_vector(prepare_inputs(t), m),
                                         encode_tree_vector(prepare_inputs(apply_rigid(t, tf)), m)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("swapping a parent and child changes the output") {
  const auto m = init_model(small_config(6, 2), 6);
  const std::vector<Vec3> pos{{0, 0, 0}, {1, 0, 0}, {2, 0.5, 0}, {2, -0.5, 0.3}};
  const auto a = make_tree({-1, 0, 1, 1}, pos);
  const auto b = make_tree({1, -1, 1, 1}, pos);
  CHECK(max_abs_diff(encode_tree_vector(prepare_inputs(a), m), encode_tree_vector(prepare_inputs(b), m)) > 1e-6);
}

TEST_CASE("prediction head") {
  auto cfg = small_config(4, 1);
  cfg.num_classes = 3;
  auto m = init_model(cfg, 7);
  const auto t = random_tree(10, 8);
  const auto in = prepare_inputs(t);
  const auto logits = predict_scores(in, m);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 3);

  for (auto& [name, tensor] : m.params)
    if (name.rfind("head.w", 0) == 0) tensor.fill(0.0);
  const auto last = "head.b" + std::to_string(head_spec(cfg).layers() - 1);
  const auto bias = m.params.at(last);
  CHECK(predict_scores(in, m) == ad::Tensor({1, 3}, std::vector<double>(bias.values().begin(), bias.values().end())));
  CHECK(predict_scores(prepare_inputs(random_tree(30, 9)), m) == predict_scores(in, m));

  ad::Graph g;
  const auto e = encode(g, in, m);
  CHECK_THROWS_AS(predict(g, e.tree_vector, m, TaskKind::Regression), ContractError);

  cfg.task = TaskKind::Regression;
  const auto r = init_model(cfg, 7);
  CHECK(predict_scores(in, r).size() == 1);
}

TEST_CASE("head and encoder gradients match finite differences") {
  auto cfg = small_config(4, 2);
  cfg.encoder.activation = ad::Activation::Tanh;
  const auto m = init_model(cfg, 10);
  const auto t = random_tree(10, 11);
  const auto in = prepare_inputs(t);
  const std::vector<double> target{1.0};
  auto build = [&](ad::Graph& g, const ad::ParamSet& p) {
    ModelParams mp{m.config, p};
    const auto e = encode(g, in, mp);
    return supervised_loss(predict(g, e.tree_vector, mp, TaskKind::Classification), target, TaskKind::Classification);
  };
  const auto res = grad_check(m.params, build, 12, 4);
  CHECK(res.checked > 50);
  CHECK(res.max_rel < 1e-4);

  const auto relu_model = init_model(small_config(4, 2), 13);
  auto build_relu = [&](ad::Graph& g, const ad::ParamSet& p) {
    ModelParams mp{relu_model.config, p};
    const auto e = encode(g, in, mp);
    return supervised_loss(predict(g, e.tree_vector, mp, TaskKind::Classification), target, TaskKind::Classification);
  };
  const auto rr = grad_check(relu_model.params, build_relu, 14, 4);
  CHECK(rr.checked > 50);
  CHECK(rr.max_rel < 1e-4);
}

TEST_CASE("config json round trip and validation") {
  ModelConfig c = small_config(7, 2);
  c.encoder.alpha = {0.5, 0.25, 0.125};
  c.encoder.agg = Aggregation::Max;
  c.encoder.readout = Readout::Sum;
  c.encoder.activation = ad::Activation::Tanh;
  c.task = TaskKind::Regression;
  c.head_depth = 2;
  const auto back = model_config_from_json(to_json(c));
  CHECK(back.encoder == c.encoder);
  CHECK(back.task == c.task);
  CHECK(back.head_depth == 2);
  CHECK(back.num_rbf == c.num_rbf);

  CHECK_THROWS_AS(encoder_config_from_json({{"num_layers", 0}}), ConfigError);
  CHECK_THROWS_AS(encoder_config_from_json({{"agg", "median"}}), ConfigError);
  CHECK_THROWS_AS(encoder_config_from_json({{"hidden_dim", "wide"}}), ConfigError);
  CHECK_THROWS_AS(model_config_from_json({{"num_classes", 1}}), ConfigError);
}

TEST_CASE("shapes and parameter names") {
  auto cfg = small_config(5, 2);
  cfg.encoder.attr_dim = 3;
  const auto m = init_model(cfg, 1);
  CHECK(m.params.at("embed.w0").shape() == std::vector<std::size_t>{3, 5});
  CHECK(m.params.at("layer1.psi.w0").rows() == 12);
  CHECK(m.params.at("layer0.phi.w0").rows() == 25);
  CHECK(m.params.at("gen.w0").rows() == 5 + 4);
  CHECK(is_encoder_param("layer0.phi.w0"));
  CHECK(is_encoder_param("embed.const"));
  CHECK_FALSE(is_encoder_param("head.w0"));
  CHECK_FALSE(is_encoder_param("gen.b1"));
  CHECK(init_model(cfg, 1).params == m.params);
  CHECK(init_model(cfg, 2).params != m.params);

  // attrs of the wrong width
  const auto t = random_tree(5, 1, 2);
  ad::Graph g;
  CHECK_THROWS_AS(encode(g, prepare_inputs(t), m), ShapeError);
  CHECK_THROWS_AS(layer_forward(g, prepare_inputs(random_tree(5, 1, 3)), g.constant(ad::Tensor::matrix(5, 4)), m, 0),
                  ShapeError);
}

TEST_CASE("decision score") {
  CHECK(decision_score(ad::Tensor::row({2.0, 5.0}), TaskKind::Classification) == doctest::Approx(3.0));
  CHECK(decision_score(ad::Tensor::row({-1.5}), TaskKind::Regression) == -1.5);
  const double s = decision_score(ad::Tensor::row({1.0, 2.0, 3.0}), TaskKind::Classification);
  CHECK(s == doctest::Approx(2.0 - std::log(std::exp(1.0) + std::exp(3.0))));
}
