// End-to-end acceptance checks. Prints one PASS/FAIL line per check and
// exits non-zero when any check fails. Pass check names to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gtree/branches.hpp"
#include "gtree/geometry.hpp"
#include "gtree/kernels.hpp"
#include "gtree/model.hpp"
#include "gtree/objectives.hpp"
#include "gtree/synthetic.hpp"
#include "gtree/train.hpp"
#include "support.hpp"

using namespace gtree;
using gtree::testing::grad_check;
using gtree::testing::random_basis;
using gtree::testing::random_hist;
using gtree::testing::random_tree;
using gtree::testing::random_unit;
using gtree::testing::transport_oracle;
using gtree::testing::unit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

RigidTransform random_motion(std::uint64_t seed, double max_shift) {
  auto m = random_rotation(seed);
  std::mt19937_64 rng(derive_seed(seed, 1));
  std::uniform_real_distribution<double> u(0.0, max_shift);
  m.translation = u(rng) * random_unit(rng);
  return m;
}

Outcome rigid_invariance() {
  ModelConfig cfg;
  double feat_dev = 0.0, score_dev = 0.0;
  int pairs = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto tree = s % 2 ? random_tree(20 + s % 60, s) : [&] {
      GeneratorConfig g;
      g.mode = SyntheticMode::Unlabeled;
      return grow_tree(g, s, static_cast<int>(s % 4 / 2));
    }();
    const auto moved = apply_rigid(tree, random_motion(1000 + s, s % 3 == 0 ? 1e3 : 10.0));
    const auto bs = enumerate_branches(tree);
    const auto fa = extract_all_features(tree, bs);
    const auto fb = extract_all_features(moved, bs);
    for (std::size_t b = 0; b < fa.size(); ++b) {
      if (fa[b].mask != fb[b].mask) return {false, "mask changed under a rigid motion"};
      const auto va = fa[b].values(), vb = fb[b].values();
      for (std::size_t c = 0; c < 6; ++c) feat_dev = std::max(feat_dev, std::abs(va[c] - vb[c]));
    }
    const auto model = init_model(cfg, 50 + s);
    const auto sa = predict_scores(prepare_inputs(tree), model);
    const auto sb = predict_scores(prepare_inputs(moved), model);
    for (std::size_t c = 0; c < sa.size(); ++c) score_dev = std::max(score_dev, std::abs(sa[c] - sb[c]));
    ++pairs;
  }
  return {feat_dev < 1e-9 && score_dev < 1e-6,
          fmt("%d pairs, feature dev %.2e (< 1e-9), score dev %.2e (< 1e-6)", pairs, feat_dev, score_dev)};
}

Outcome reconstruction() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  auto sine = [](const Vec3& a, const Vec3& b) { return norm(cross(a, b)) / (norm(a) * norm(b)); };
  double branch_err = 0.0;
  int branches = 0;
  while (branches < 1000) {
    const Vec3 i{g(rng), g(rng), g(rng)}, j{g(rng), g(rng), g(rng)}, k{g(rng), g(rng), g(rng)},
        p{g(rng), g(rng), g(rng)};
    if (sine(j - i, k - j) < 0.05 || sine(k - j, p - j) < 0.05 || norm(j - i) < 0.05 || norm(k - j) < 0.05 ||
        norm(p - j) < 0.05)
      continue;
    const auto f = extract_branch_features(i, j, k, p, 3);
    branch_err = std::max(branch_err, norm(reconstruct_node(j, k, p, f) - i));
    ++branches;
  }

  GeneratorConfig cfg;
  cfg.mode = SyntheticMode::Unlabeled;
  cfg.exact_nodes = 200;
  double tree_err = 0.0;
  const int trees = 20;
  for (int s = 0; s < trees; ++s) {
    const auto t = apply_rigid(grow_tree(cfg, 300 + s, s % 2), random_motion(400 + s, 50.0));
    const auto bs = enumerate_branches(t);
    std::vector<BranchRecord> recs;
    for (const auto& b : bs.branches)
      if (b.valid_len == 3) recs.push_back({b, extract_branch_features(t, b)});
    const int a = t.root(), b = t.children(a)[0], c = t.children(b)[0];
    const auto out = reconstruct_tree(t, recs, {a, b, c}, {t.position(a), t.position(b), t.position(c)});
    for (std::size_t v = 0; v < t.size(); ++v)
      tree_err = std::max(tree_err, norm(out[v] - t.position(static_cast<int>(v))));
  }
  return {branch_err < 1e-8 && tree_err < 1e-6,
          fmt("%d branches max err %.2e (< 1e-8); %d trees of 200 nodes max err %.2e (< 1e-6)", branches,
              branch_err, trees, tree_err)};
}

Outcome linear_scaling() {
  int law_ok = 0;
  const int trees = 1000;
  GeneratorConfig g;
  g.mode = SyntheticMode::Unlabeled;
  for (int s = 0; s < trees; ++s) {
    const auto t = s % 2 ? random_tree(1 + static_cast<std::size_t>(s % 300), 5000 + s) : grow_tree(g, 5000 + s, s % 4 / 2);
    std::size_t deep = 0;
    for (std::size_t v = 0; v < t.size(); ++v) deep += t.depth(static_cast<int>(v)) >= 3;
    law_ok += enumerate_branches(t).full_length_count() == deep;
  }
  std::vector<std::size_t> sizes;
  for (std::size_t n = 1000; n <= 10000; n += 1000) sizes.push_back(n);
  const auto rep = bench_scaling(sizes, 3, ModelConfig{}, 11);
  std::string times;
  for (const auto& r : rep.rows) times += fmt(" %zu:%.3fs", r.nodes, r.mean_seconds);
  return {law_ok == trees && rep.pearson_r >= 0.99,
          fmt("branch law %d/%d trees; pearson r %.4f (>= 0.99);", law_ok, trees, rep.pearson_r) + times};
}

Outcome emd_oracle() {
  std::mt19937_64 rng(99);
  double worst = 0.0;
  int cases = 0;
  for (int K = 2; K <= 6; ++K) {
    for (int r = 0; r < 120; ++r) {
      const auto b = random_basis(rng, K);
      const auto p = random_hist(rng, K), q = random_hist(rng, K);
      worst = std::max(worst, std::abs(emd_1d({p}, {q}, b) - transport_oracle(unit(p), unit(q), b.mu)));
      ++cases;
    }
  }
  return {worst < 1e-9, fmt("%d histogram pairs, max |emd - transport| %.2e (< 1e-9)", cases, worst)};
}

Outcome gradient_fidelity() {
  const char* names[] = {"supervised", "order", "generative", "combined"};
  double worst[4] = {0, 0, 0, 0};
  int instances[4] = {0, 0, 0, 0};
  int checked[4] = {0, 0, 0, 0};
  const auto basis = RadialBasisConfig::evenly_spaced(5, 2.0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    ModelConfig cfg;
    cfg.encoder.hidden_dim = 4;
    cfg.encoder.num_layers = 2;
    cfg.encoder.activation = s % 2 ? ad::Activation::ReLU : ad::Activation::Tanh;
    cfg.num_rbf = basis.K();
    cfg.task = s % 4 == 3 ? TaskKind::Regression : TaskKind::Classification;
    cfg.num_classes = 2 + static_cast<int>(s % 3);
    const auto model = init_model(cfg, 700 + s);
    const auto tree = random_tree(6 + s % 9, 800 + s);
    const auto in = prepare_inputs(tree);
    const auto gen_targets = prepare_generative_targets(tree, basis);
    SslConfig sc;
    sc.order.margin = 0.05 + 0.1 * static_cast<double>(s % 3);
    sc.order.pairs_per_tree = 8 + static_cast<int>(s % 5);
    sc.generative_weight = 0.5 + 0.1 * static_cast<double>(s % 4);
    const auto pairs = sample_order_pairs(tree, sc.order, 900 + s);
    const std::vector<double> target{cfg.task == TaskKind::Regression ? 3.5 : static_cast<double>(s % cfg.num_classes)};

    const testing::LossBuilder builders[] = {
        [&](ad::Graph& g, const ad::ParamSet& p) {
          ModelParams mp{cfg, p};
          return supervised_loss(predict(g, encode(g, in, mp).tree_vector, mp, cfg.task), target, cfg.task);
        },
        [&](ad::Graph& g, const ad::ParamSet& p) {
          ModelParams mp{cfg, p};
          return order_loss(encode(g, in, mp).final_nodes(), pairs, sc.order).total;
        },
        [&](ad::Graph& g, const ad::ParamSet& p) {
          ModelParams mp{cfg, p};
          return generative_loss(g, encode(g, in, mp).final_nodes(), gen_targets, mp, basis).loss;
        },
        [&](ad::Graph& g, const ad::ParamSet& p) {
          return ssl_loss(g, in, gen_targets, pairs, ModelParams{cfg, p}, basis, sc).total;
        }};
    for (int l = 0; l < 4; ++l) {
      const auto res = grad_check(model.params, builders[l], 1000 + s, 3);
      worst[l] = std::max(worst[l], res.max_rel);
      checked[l] += res.checked;
      instances[l] += res.checked > 0;
    }
  }
  bool ok = true;
  std::string detail;
  for (int l = 0; l < 4; ++l) {
    ok = ok && worst[l] < 1e-4 && instances[l] >= 20;
    detail += fmt("%s %d inst/%d probes max rel %.1e; ", names[l], instances[l], checked[l], worst[l]);
  }
  return {ok, detail + "(< 1e-4)"};
}

Outcome order_semantics() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ad::Graph g;
  int zero_ok = 0, violated_ok = 0, beyond_ok = 0, within_ok = 0, trials = 0;
  for (int trial = 0; trial < 200; ++trial) {
    OrderLossConfig cfg;
    cfg.reduction = trial % 2 ? OrderReduction::SquaredNorm : OrderReduction::Sum;
    cfg.margin = 0.1 + 2.0 * u(rng);
    const std::size_t n = 5 + trial % 40, dim = 1 + static_cast<std::size_t>(trial % 8);
    const auto t = random_tree(n, 2000 + static_cast<std::uint64_t>(trial));
    // every component is non-increasing down each root-to-leaf path
    ad::Tensor H = ad::Tensor::matrix(n, dim);
    for (int v : t.bfs_order())
      for (std::size_t d = 0; d < dim; ++d)
        H.at(v, d) = t.parent(v) == kNone ? 5.0 * u(rng) - 2.5 : H.at(t.parent(v), d) - (u(rng) < 0.3 ? 0.0 : u(rng));
    OrderPairs all;
    for (int v = 0; v < static_cast<int>(n); ++v)
      for (int a = t.parent(v); a != kNone; a = t.parent(a)) all.positives.emplace_back(a, v);
    if (all.positives.empty()) continue;
    ++trials;
    zero_ok += order_loss(g.constant(H), all, cfg).positive.value().item() == 0.0;

    const auto [anc, desc] = all.positives[rng() % all.positives.size()];
    const auto d = static_cast<std::size_t>(rng() % dim);
    ad::Tensor bad = H;
    bad.at(static_cast<std::size_t>(desc), d) = H.at(static_cast<std::size_t>(anc), d) + 1e-3 * (0.01 + u(rng));
    violated_ok += order_loss(g.constant(bad), all, cfg).positive.value().item() > 0.0;

    // a negative pair pushed past the margin contributes nothing; inside it does
    ad::Tensor E = ad::Tensor::matrix(2, dim);
    const auto dir = static_cast<std::size_t>(rng() % dim);
    const OrderPairs neg{{}, {{0, 1}}};
    E.at(1, dir) = std::sqrt(cfg.margin) * (1.0 + u(rng)) + 1e-9;
    beyond_ok += order_loss(g.constant(E), neg, cfg).negative.value().item() == 0.0;
    E.at(1, dir) = std::sqrt(cfg.margin) * 0.9 * u(rng);
    within_ok += order_loss(g.constant(E), neg, cfg).negative.value().item() > 0.0;
  }
  return {trials > 0 && zero_ok == trials && violated_ok == trials && beyond_ok == trials && within_ok == trials,
          fmt("%d trials: containment zero %d, single violation positive %d, beyond margin zero %d, "
              "inside margin positive %d",
              trials, zero_ok, violated_ok, beyond_ok, within_ok)};
}

Dataset curvature_task(std::uint64_t seed) {
  GeneratorConfig g;
  g.count = 200;
  return dataset_from_samples(generate_synthetic(g, seed), TaskKind::Classification);
}

Outcome desk_learning() {
  std::vector<double> supervised, ssl, scratch;
  double nodes = 0.0;
  std::size_t trees = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto data = curvature_task(100 + s);
    for (const auto& t : data.trees) nodes += static_cast<double>(t.size());
    trees += data.size();

    TrainConfig sup;
    sup.epochs = 50;
    sup.seed = s;
    sup.split_seed = 1000 + s;
    supervised.push_back(*train_supervised(data, sup).report.test_metric);

    TrainConfig pre = sup;
    pre.mode = TrainMode::Pretrain;
    pre.epochs = 20;
    const auto enc = pretrain_ssl(data, pre);
    const ad::Checkpoint ck{enc.model.params, encoder_meta(enc.model.config, enc.basis)};

    TrainConfig few = sup;
    few.mode = TrainMode::Finetune;
    few.epochs = 200;
    few.label_fraction = 0.1;
    ssl.push_back(*finetune(ck, data, few).report.test_metric);
    few.mode = TrainMode::Supervised;
    scratch.push_back(*train_supervised(data, few).report.test_metric);
    std::printf("    seed %llu: supervised %.4f, 10%% labels pretrained %.4f, scratch %.4f\n",
                static_cast<unsigned long long>(s), supervised.back(), ssl.back(), scratch.back());
    std::fflush(stdout);
  }
  const double ms = median(supervised), mp = median(ssl), mr = median(scratch);
  return {ms >= 0.95 && mp >= mr,
          fmt("mean %.0f nodes/tree; median test AUC supervised %.4f (>= 0.95), 10%% labels pretrained %.4f vs "
              "scratch %.4f",
              nodes / static_cast<double>(trees), ms, mp, mr)};
}

bool same_params(const ad::ParamSet& a, const ad::ParamSet& b) { return a == b; }

Outcome determinism() {
  GeneratorConfig g;
  g.count = 60;
  const auto data = dataset_from_samples(generate_synthetic(g, 77), TaskKind::Classification);
  TrainConfig c;
  c.epochs = 8;
  c.seed = 3;
  c.split_seed = 4;
  c.model.encoder.hidden_dim = 16;
  c.split_ratios = {0.6, 0.2, 0.2};
  int ok = 0, total = 0;
  auto agree = [&](const TrainResult& a, const TrainResult& b) {
    ++total;
    ok += a.report.same_metrics(b.report) && same_params(a.model.params, b.model.params);
  };
  agree(train_supervised(data, c), train_supervised(data, c));
  TrainConfig serial = c;
  serial.exec = Exec::Serial;
  agree(train_supervised(data, c), train_supervised(data, serial));

  TrainConfig pre = c;
  pre.mode = TrainMode::Pretrain;
  const auto e1 = pretrain_ssl(data, pre), e2 = pretrain_ssl(data, pre);
  agree(e1, e2);
  const ad::Checkpoint ck{e1.model.params, encoder_meta(e1.model.config, e1.basis)};
  TrainConfig ft = c;
  ft.mode = TrainMode::Finetune;
  ft.label_fraction = 0.3;
  agree(finetune(ck, data, ft), finetune(ck, data, ft));

  TrainConfig reg = c;
  GeneratorConfig rg = g;
  rg.mode = SyntheticMode::Regression;
  const auto rdata = dataset_from_samples(generate_synthetic(rg, 78), TaskKind::Regression);
  reg.model.task = TaskKind::Regression;
  agree(train_supervised(rdata, reg), train_supervised(rdata, reg));
  return {ok == total, fmt("%d/%d repeated runs bit-identical (supervised, serial vs parallel, pretrain, finetune, "
                           "regression)",
                           ok, total)};
}

struct Check {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Check> checks{{"rigid-invariance", rigid_invariance}, {"reconstruction", reconstruction},
                                  {"linear-scaling", linear_scaling},     {"emd-oracle", emd_oracle},
                                  {"gradient-fidelity", gradient_fidelity}, {"order-semantics", order_semantics},
                                  {"desk-learning", desk_learning},       {"determinism", determinism}};
  std::vector<std::string> wanted(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : checks) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), sec);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
