#include "gtree/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "gtree/ad/adam.hpp"
#include "gtree/errors.hpp"
#include "gtree/geometry.hpp"

namespace gtree {

using nlohmann::json;

double Dataset::target(std::size_t t) const {
  const auto& l = trees.at(t).label();
  if (!std::holds_alternative<double>(l)) throw DataError("tree " + std::to_string(t) + " has no numeric label");
  return std::get<double>(l);
}

std::vector<double> Dataset::targets(std::span<const std::size_t> idx) const {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto t : idx) out.push_back(target(t));
  return out;
}

namespace {

// Turns string class labels into indices and counts classes.
void index_classes(Dataset& d) {
  if (d.task != TaskKind::Classification) return;
  std::set<std::string> names;
  bool numeric = false;
  for (const auto& t : d.trees) {
    if (std::holds_alternative<std::string>(t.label())) names.insert(std::get<std::string>(t.label()));
    else if (std::holds_alternative<double>(t.label())) numeric = true;
  }
  if (!names.empty() && numeric) throw DataError("mixed numeric and string class labels");
  if (!names.empty()) {
    d.class_names.assign(names.begin(), names.end());
    for (auto& t : d.trees) {
      if (!std::holds_alternative<std::string>(t.label())) continue;
      const auto it = std::lower_bound(d.class_names.begin(), d.class_names.end(), std::get<std::string>(t.label()));
      t.set_label(static_cast<double>(it - d.class_names.begin()));
    }
    d.num_classes = std::max<int>(2, static_cast<int>(d.class_names.size()));
    return;
  }
  int top = 1;
  for (const auto& t : d.trees) {
    if (!std::holds_alternative<double>(t.label())) continue;
    const double y = std::get<double>(t.label());
    if (!(y >= 0.0) || y != std::floor(y) || y > 1e6) throw DataError("class labels must be small non-negative integers");
    top = std::max(top, static_cast<int>(y));
  }
  d.num_classes = top + 1;
}

}  // namespace

Dataset dataset_from_samples(std::vector<SyntheticSample> samples, TaskKind task) {
  Dataset d;
  d.task = task;
  d.trees.reserve(samples.size());
  for (auto& s : samples) d.trees.push_back(std::move(s.tree));
  index_classes(d);
  return d;
}

Dataset dataset_from_trees(std::vector<GeometricTree> trees) {
  Dataset d;
  d.trees = std::move(trees);
  return d;
}

Dataset load_dataset(const DatasetManifest& manifest, const std::filesystem::path& base_dir) {
  manifest.validate();
  Dataset d;
  d.task = manifest.task_kind;
  for (const auto& e : manifest.entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base_dir / p;
    const auto text = read_text_file(p);
    auto tree = p.extension() == ".swc" ? parse_swc(text) : parse_tree_json(text);
    if (!std::holds_alternative<std::monostate>(e.target)) tree.set_label(e.target);
    d.trees.push_back(std::move(tree));
  }
  index_classes(d);
  return d;
}

Split make_split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n, n_train)));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(s.train.size()),
               order.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val), order.end());
  return s;
}

std::vector<std::size_t> label_subset(const Dataset& data, std::span<const std::size_t> train, double fraction,
                                      std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("label fraction must be in (0, 1]");
  std::vector<std::size_t> pool(train.begin(), train.end());
  if (fraction == 1.0) return pool;
  std::mt19937_64 rng(derive_seed(seed, 0x1abe1));
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> out;
  if (data.task == TaskKind::Classification) {
    std::map<double, std::vector<std::size_t>> by_class;
    for (auto t : pool) by_class[data.target(t)].push_back(t);
    for (const auto& [cls, members] : by_class) {
      const auto take = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size()))));
      out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    }
  } else {
    const auto take =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size()))));
    out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Supervised:
      return "supervised";
    case TrainMode::Pretrain:
      return "pretrain";
    case TrainMode::Finetune:
      return "finetune";
  }
  return "supervised";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "supervised") return TrainMode::Supervised;
  if (s == "pretrain") return TrainMode::Pretrain;
  if (s == "finetune") return TrainMode::Finetune;
  throw ConfigError("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(decay_ratio > 0.0) || decay_ratio > 1.0) throw ConfigError("decay_ratio must be in (0, 1]");
  if (patience < 1) throw ConfigError("patience must be positive");
  double s = 0.0;
  for (double r : split_ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    s += r;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (!(split_ratios[0] > 0.0) || !(split_ratios[1] > 0.0)) throw ConfigError("train and val ratios must be positive");
  if (!(label_fraction > 0.0) || label_fraction > 1.0) throw ConfigError("label_fraction must be in (0, 1]");
  model.validate();
  if (basis) basis->validate();
  ssl.order.validate();
  if (!(ssl.generative_weight >= 0.0) || !(ssl.order_weight >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

json to_json(const TrainConfig& c) {
  json j{{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"decay_ratio", c.decay_ratio},
         {"patience", c.patience},
         {"split_ratios", c.split_ratios},
         {"seed", c.seed},
         {"split_seed", c.split_seed},
         {"model", to_json(c.model)},
         {"order", to_json(c.ssl.order)},
         {"generative_weight", c.ssl.generative_weight},
         {"order_weight", c.ssl.order_weight},
         {"mode", to_string(c.mode)},
         {"label_fraction", c.label_fraction},
         {"freeze_encoder", c.freeze_encoder},
         {"exec", c.exec == Exec::Parallel ? "parallel" : "serial"}};
  j["basis"] = c.basis ? to_json(*c.basis) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.decay_ratio = j.value("decay_ratio", c.decay_ratio);
    c.patience = j.value("patience", c.patience);
    if (j.contains("split_ratios")) c.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
    c.seed = j.value("seed", c.seed);
    c.split_seed = j.value("split_seed", c.split_seed);
    if (j.contains("model")) {
      json merged = to_json(c.model);
      merged.merge_patch(j.at("model"));
      c.model = model_config_from_json(merged);
    }
    if (j.contains("basis") && !j.at("basis").is_null()) c.basis = radial_basis_from_json(j.at("basis"));
    if (j.contains("order")) {
      json merged = to_json(c.ssl.order);
      merged.merge_patch(j.at("order"));
      c.ssl.order = order_loss_config_from_json(merged);
    }
    c.ssl.generative_weight = j.value("generative_weight", c.ssl.generative_weight);
    c.ssl.order_weight = j.value("order_weight", c.ssl.order_weight);
    if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
    c.label_fraction = j.value("label_fraction", c.label_fraction);
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
    if (j.contains("exec")) {
      const auto e = j.at("exec").get<std::string>();
      if (e != "parallel" && e != "serial") throw ConfigError("exec must be 'parallel' or 'serial'");
      c.exec = e == "parallel" ? Exec::Parallel : Exec::Serial;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

json RunReport::to_json() const {
  json ep = json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_loss", e.val_loss},
                  {"lr", e.lr},
                  {"seconds", e.seconds},
                  {"train_generative", e.train_generative},
                  {"train_order", e.train_order},
                  {"val_violation_rate", e.val_violation_rate}});
  }
  return {{"seed", seed},
          {"best_epoch", best_epoch},
          {"best_val_loss", best_val_loss},
          {"metric", metric_name},
          {"test_metric", test_metric ? json(*test_metric) : json(nullptr)},
          {"split_sizes", {{"train", train_size}, {"val", val_size}, {"test", test_size}}},
          {"epochs", ep},
          {"config", config}};
}

std::string RunReport::loss_curve_csv() const {
  std::string out = "step,generative,order,total,val_total,lr,seconds\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + ',' + format_real(e.train_generative) + ',' + format_real(e.train_order) + ',' +
           format_real(e.train_loss) + ',' + format_real(e.val_loss) + ',' + format_real(e.lr) + ',' +
           format_real(e.seconds) + '\n';
  }
  return out;
}

bool RunReport::same_metrics(const RunReport& o) const {
  if (epochs.size() != o.epochs.size() || best_epoch != o.best_epoch || best_val_loss != o.best_val_loss ||
      test_metric != o.test_metric)
    return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = o.epochs[i];
    if (a.train_loss != b.train_loss || a.val_loss != b.val_loss || a.lr != b.lr ||
        a.train_generative != b.train_generative || a.train_order != b.train_order ||
        a.val_violation_rate != b.val_violation_rate)
      return false;
  }
  return true;
}

namespace {

struct LossTerms {
  ad::Var total;
  ad::Var generative;
  ad::Var order;
};

using BuildLoss = std::function<LossTerms(ad::Graph&, const ModelParams&, std::size_t tree, std::uint64_t stream)>;

struct TreeEval {
  double total = 0.0;
  double generative = 0.0;
  double order = 0.0;
  ad::GradSet grads;
};

TreeEval eval_tree(const BuildLoss& build, const ModelParams& model, std::size_t t, std::uint64_t stream,
                   bool want_grads, bool freeze_encoder) {
  ad::Graph g;
  const LossTerms terms = build(g, model, t, stream);
  TreeEval e;
  e.total = terms.total.value().item();
  if (terms.generative.valid()) e.generative = terms.generative.value().item();
  if (terms.order.valid()) e.order = terms.order.value().item();
  if (!std::isfinite(e.total)) throw NumericError("non-finite loss on tree " + std::to_string(t));
  if (want_grads) {
    g.backward(terms.total);
    e.grads = g.parameter_grads();
    if (freeze_encoder) std::erase_if(e.grads, [](const auto& kv) { return is_encoder_param(kv.first); });
  }
  return e;
}

struct LoopOutput {
  ad::ParamSet best;
  RunReport report;
};

using EpochHook = std::function<void(const ModelParams&, EpochRecord&)>;

LoopOutput run_loop(ModelParams model, const BuildLoss& build, std::span<const std::size_t> train,
                    std::span<const std::size_t> val, const TrainConfig& cfg, const EpochHook& hook) {
  if (train.empty()) throw ConfigError("training split is empty");
  if (val.empty()) throw ConfigError("validation split is empty");
  LoopOutput out;
  out.best = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  double lr = cfg.lr;
  int stall = 0;
  ad::AdamState adam;
  std::vector<std::size_t> order(train.begin(), train.end());
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const std::uint64_t val_stream = derive_seed(cfg.seed, 0x7a1);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const std::uint64_t epoch_stream = derive_seed(cfg.seed ^ 0x55u, static_cast<std::uint64_t>(epoch));
    for (std::size_t start = 0; start < order.size(); start += B) {
      const auto n = std::min(B, order.size() - start);
      std::vector<TreeEval> evals(n);
      for_each_index(n, cfg.exec, [&](std::size_t b) {
        const auto t = order[start + b];
        evals[b] = eval_tree(build, model, t, derive_seed(epoch_stream, t), true, cfg.freeze_encoder);
      });
      ad::GradSet grads;
      for (const auto& e : evals) {
        ad::accumulate(grads, e.grads, 1.0 / static_cast<double>(n));
        rec.train_loss += e.total;
        rec.train_generative += e.generative;
        rec.train_order += e.order;
      }
      ad::adam_step(model.params, grads, adam, lr);
    }
    const double inv_train = 1.0 / static_cast<double>(order.size());
    rec.train_loss *= inv_train;
    rec.train_generative *= inv_train;
    rec.train_order *= inv_train;

    std::vector<double> val_losses(val.size());
    for_each_index(val.size(), cfg.exec, [&](std::size_t v) {
      val_losses[v] = eval_tree(build, model, val[v], derive_seed(val_stream, val[v]), false, false).total;
    });
    for (double v : val_losses) rec.val_loss += v;
    rec.val_loss /= static_cast<double>(val.size());
    if (hook) hook(model, rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      out.best = model.params;
      out.report.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      lr *= cfg.decay_ratio;
      stall = 0;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.report.epochs.push_back(rec);
  }
  out.report.best_val_loss = best_val;
  return out;
}

std::vector<TreeInputs> prepare_all(const Dataset& data, Exec exec) {
  std::vector<TreeInputs> in(data.size());
  for_each_index(data.size(), exec, [&](std::size_t t) { in[t] = prepare_inputs(data.trees[t], Exec::Serial); });
  return in;
}

void check_task(const Dataset& data, const ModelConfig& m) {
  if (data.task != m.task) throw ConfigError("dataset task is " + to_string(data.task) + " but the model predicts " +
                                             to_string(m.task));
  if (m.task == TaskKind::Classification && m.num_classes < data.num_classes)
    throw ConfigError("model has fewer classes than the dataset");
  if (m.encoder.attr_dim != static_cast<int>(data.trees.empty() ? 0 : data.trees.front().attr_dim()))
    throw ConfigError("encoder attr_dim does not match the dataset node attrs");
}

TrainResult supervised_from(ModelParams model, const Dataset& data, const TrainConfig& cfg) {
  const Split split = make_split(data.size(), cfg.split_ratios, cfg.split_seed);
  const auto labeled = label_subset(data, split.train, cfg.label_fraction, cfg.split_seed);
  const auto inputs = prepare_all(data, cfg.exec);
  const TaskKind task = cfg.model.task;
  BuildLoss build = [&](ad::Graph& g, const ModelParams& m, std::size_t t, std::uint64_t) {
    const Encoding enc = encode(g, inputs[t], m);
    const double y = data.target(t);
    return LossTerms{supervised_loss(predict(g, enc.tree_vector, m, task), std::span(&y, 1), task), {}, {}};
  };
  auto loop = run_loop(std::move(model), build, labeled, split.val, cfg, {});
  TrainResult r;
  r.model = ModelParams{cfg.model, std::move(loop.best)};
  r.report = std::move(loop.report);
  r.report.metric_name = metric_name(cfg.model);
  if (!split.test.empty()) r.report.test_metric = evaluate_metric(r.model, data, split.test, cfg.exec);
  r.report.train_size = labeled.size();
  r.report.val_size = split.val.size();
  r.report.test_size = split.test.size();
  r.report.seed = cfg.seed;
  r.report.config = to_json(cfg);
  return r;
}

}  // namespace

TrainResult train_supervised(const Dataset& data, const TrainConfig& config) {
  config.validate();
  check_task(data, config.model);
  return supervised_from(init_model(config.model, config.seed), data, config);
}

TrainResult pretrain_ssl(const Dataset& data, const TrainConfig& config) {
  config.validate();
  const bool any_internal =
      std::any_of(data.trees.begin(), data.trees.end(), [](const GeometricTree& t) { return t.size() > 1; });
  if (!any_internal) throw ConfigError("pretraining needs trees with internal nodes");
  const auto attr = data.trees.front().attr_dim();
  if (config.model.encoder.attr_dim != static_cast<int>(attr))
    throw ConfigError("encoder attr_dim does not match the dataset node attrs");

  const Split split = make_split(data.size(), config.split_ratios, config.split_seed);
  RadialBasisConfig basis;
  if (config.basis) {
    basis = *config.basis;
  } else {
    std::vector<const GeometricTree*> train_trees;
    for (auto t : split.train) train_trees.push_back(&data.trees[t]);
    basis = RadialBasisConfig::evenly_spaced(config.model.num_rbf, edge_length_quantile(train_trees));
  }
  if (basis.K() != config.model.num_rbf) throw ConfigError("basis size must equal model num_rbf");

  const auto inputs = prepare_all(data, config.exec);
  std::vector<GenerativeTargets> gen(data.size());
  for_each_index(data.size(), config.exec,
                 [&](std::size_t t) { gen[t] = prepare_generative_targets(data.trees[t], basis); });

  BuildLoss build = [&](ad::Graph& g, const ModelParams& m, std::size_t t, std::uint64_t stream) {
    const auto pairs = sample_order_pairs(data.trees[t], config.ssl.order, stream);
    const auto s = ssl_loss(g, inputs[t], gen[t], pairs, m, basis, config.ssl);
    return LossTerms{s.total, s.generative, s.order};
  };
  std::vector<GeometricTree> val_trees;
  for (auto v : split.val) val_trees.push_back(data.trees[v]);
  const std::uint64_t violation_seed = derive_seed(config.seed, 0xc0de);
  EpochHook hook = [&](const ModelParams& m, EpochRecord& rec) {
    rec.val_violation_rate = order_violation_rate(m, val_trees, config.ssl.order, violation_seed);
  };
  auto loop = run_loop(init_model(config.model, config.seed), build, split.train, split.val, config, hook);

  TrainResult r;
  r.model.config = config.model;
  for (auto& [name, t] : loop.best)
    if (is_encoder_param(name)) r.model.params.emplace(name, std::move(t));
  r.basis = basis;
  r.report = std::move(loop.report);
  r.report.metric_name = "ssl_loss";
  r.report.train_size = split.train.size();
  r.report.val_size = split.val.size();
  r.report.test_size = split.test.size();
  r.report.seed = config.seed;
  r.report.config = to_json(config);
  r.report.config["basis"] = to_json(basis);
  return r;
}

json encoder_meta(const ModelConfig& model, const RadialBasisConfig& basis) {
  return {{"kind", "encoder"}, {"encoder", to_json(model.encoder)}, {"basis", to_json(basis)}};
}

TrainResult finetune(const ad::Checkpoint& encoder, const Dataset& data, const TrainConfig& config) {
  config.validate();
  check_task(data, config.model);
  if (!encoder.meta.contains("encoder")) throw CheckpointError("checkpoint does not describe an encoder");
  EncoderConfig stored;
  try {
    stored = encoder_config_from_json(encoder.meta.at("encoder"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint encoder config is invalid: ") + e.what());
  }
  if (!(stored == config.model.encoder)) throw CheckpointError("checkpoint encoder config differs from the requested one");
  ModelParams model = init_model(config.model, config.seed);
  for (auto& [name, t] : model.params) {
    if (!is_encoder_param(name)) continue;
    const auto it = encoder.params.find(name);
    if (it == encoder.params.end()) throw CheckpointError("checkpoint lacks encoder weight '" + name + "'");
    if (it->second.shape() != t.shape()) throw CheckpointError("checkpoint weight '" + name + "' has the wrong shape");
    t = it->second;
  }
  return supervised_from(std::move(model), data, config);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("auc: scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (auto l : labels) {
    if (l != 0 && l != 1) throw MetricError("auc labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc needs both classes");
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    while (b < idx.size() && scores[idx[b]] == scores[idx[a]]) ++b;
    const double mid_rank = 0.5 * static_cast<double>(a + b + 1);  // 1-based average rank of the tie block
    for (std::size_t c = a; c < b; ++c)
      if (labels[idx[c]] == 1) rank_sum += mid_rank;
    a = b;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double mae(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw MetricError("mae: length mismatch");
  if (preds.empty()) throw MetricError("mae of nothing");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - targets[i]);
  return s / static_cast<double>(preds.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw MetricError("pearson needs two equal-length series");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> score_trees(const ModelParams& model, const Dataset& data, std::span<const std::size_t> idx,
                                Exec exec) {
  std::vector<double> out(idx.size());
  for_each_index(idx.size(), exec, [&](std::size_t i) {
    const auto s = predict_scores(prepare_inputs(data.trees[idx[i]], Exec::Serial), model);
    out[i] = decision_score(s, model.config.task);
  });
  return out;
}

std::string metric_name(const ModelConfig& config) {
  if (config.task == TaskKind::Regression) return "mae";
  return config.num_classes == 2 ? "auc" : "accuracy";
}

double evaluate_metric(const ModelParams& model, const Dataset& data, std::span<const std::size_t> idx, Exec exec) {
  const auto targets = data.targets(idx);
  if (model.config.task == TaskKind::Regression) return mae(score_trees(model, data, idx, exec), targets);
  if (model.config.num_classes == 2) {
    std::vector<int> labels(targets.begin(), targets.end());
    return auc(score_trees(model, data, idx, exec), labels);
  }
  std::vector<int> hit(idx.size());
  for_each_index(idx.size(), exec, [&](std::size_t i) {
    const auto s = predict_scores(prepare_inputs(data.trees[idx[i]], Exec::Serial), model);
    const auto best = std::max_element(s.values().begin(), s.values().end()) - s.values().begin();
    hit[i] = static_cast<double>(best) == targets[i];
  });
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(idx.size());
}

double order_violation_rate(const ModelParams& model, std::span<const GeometricTree> trees,
                            const OrderLossConfig& config, std::uint64_t seed) {
  std::size_t total = 0, bad = 0;
  for (std::size_t t = 0; t < trees.size(); ++t) {
    if (trees[t].size() < 2) continue;
    ad::Graph g;
    const auto h = encode(g, prepare_inputs(trees[t], Exec::Serial), model).final_nodes().value();
    const auto pairs = sample_order_pairs(trees[t], config, derive_seed(seed, t));
    for (const auto& [a, d] : pairs.positives) {
      ++total;
      for (std::size_t b = 0; b < h.cols(); ++b)
        if (h.at(static_cast<std::size_t>(d), b) > h.at(static_cast<std::size_t>(a), b)) {
          ++bad;
          break;
        }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(total);
}

TreeScorer model_scorer(const ModelParams& model) {
  return [&model](const GeometricTree& tree) {
    return decision_score(predict_scores(prepare_inputs(tree, Exec::Serial), model), model.config.task);
  };
}

InvarianceReport invariance_test(const TreeScorer& scorer, const Dataset& data, int n_transforms, std::uint64_t seed,
                                 std::span<const double> magnitudes, Exec exec) {
  if (n_transforms < 1) throw ConfigError("n_transforms must be positive");
  const auto N = data.size();
  std::vector<double> base(N);
  for_each_index(N, exec, [&](std::size_t t) { base[t] = scorer(data.trees[t]); });

  const bool binary = data.task == TaskKind::Classification && data.num_classes == 2 &&
                      std::all_of(data.trees.begin(), data.trees.end(),
                                  [](const GeometricTree& t) { return std::holds_alternative<double>(t.label()); });
  std::vector<int> labels;
  if (binary)
    for (std::size_t t = 0; t < N; ++t) labels.push_back(static_cast<int>(data.target(t)));

  InvarianceReport rep;
  for (double mag : magnitudes) {
    InvarianceRow row;
    row.magnitude = mag;
    double auc_sum = 0.0;
    int auc_count = 0;
    for (int r = 0; r < n_transforms; ++r) {
      RigidTransform tf = random_rotation(derive_seed(seed, static_cast<std::uint64_t>(r)));
      std::mt19937_64 rng(derive_seed(seed ^ 0x7a951a7ULL, static_cast<std::uint64_t>(r)));
      std::normal_distribution<double> gauss;
      Vec3 dir{gauss(rng), gauss(rng), gauss(rng)};
      dir = dir / norm(dir);
      tf.translation = mag * dir;
      std::vector<double> moved(N);
      for_each_index(N, exec, [&](std::size_t t) { moved[t] = scorer(apply_rigid(data.trees[t], tf)); });
      for (std::size_t t = 0; t < N; ++t) row.max_deviation = std::max(row.max_deviation, std::abs(moved[t] - base[t]));
      if (binary) {
        try {
          auc_sum += auc(moved, labels);
          ++auc_count;
        } catch (const MetricError&) {
        }
      }
    }
    if (auc_count > 0) row.auc = auc_sum / auc_count;
    rep.max_deviation = std::max(rep.max_deviation, row.max_deviation);
    rep.rows.push_back(row);
  }
  return rep;
}

BenchReport bench_scaling(std::span<const std::size_t> node_counts, int trees_per_point, const ModelConfig& config,
                          std::uint64_t seed) {
  if (trees_per_point < 1) throw ConfigError("trees_per_point must be positive");
  if (node_counts.empty()) throw ConfigError("no node counts to benchmark");
  for (std::size_t i = 0; i < node_counts.size(); ++i) {
    if (node_counts[i] < 4) throw ConfigError("benchmark trees need at least 4 nodes");
    if (i > 0 && node_counts[i] <= node_counts[i - 1]) throw ConfigError("node counts must be ascending");
  }
  ModelConfig cfg = config;
  cfg.encoder.attr_dim = 0;
  const ModelParams model = init_model(cfg, seed);
  GeneratorConfig gen;
  gen.mode = SyntheticMode::Unlabeled;

  auto pass = [&](const GeometricTree& tree) {
    const auto in = prepare_inputs(tree, Exec::Serial);
    ad::Graph g;
    const Encoding enc = encode(g, in, model);
    const double y = 0.0;
    const auto scores = predict(g, enc.tree_vector, model, cfg.task);
    g.backward(supervised_loss(scores, std::span(&y, 1), cfg.task));
    return in.owner.size();
  };

  BenchReport rep;
  bool warmed = false;
  for (auto count : node_counts) {
    gen.exact_nodes = count;
    std::vector<GeometricTree> trees;
    for (int t = 0; t < trees_per_point; ++t)
      trees.push_back(grow_tree(gen, derive_seed(seed, count * 1024 + static_cast<std::size_t>(t)), 0));
    if (!warmed) {
      pass(trees.front());
      warmed = true;
    }
    BenchRow row;
    row.nodes = count;
    row.trees = trees.size();
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& tree : trees) row.branches += pass(tree);
    row.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.mean_seconds = row.total_seconds / static_cast<double>(trees.size());
    row.branches /= trees.size();
    rep.rows.push_back(row);
  }
  if (rep.rows.size() >= 2) {
    std::vector<double> x, y;
    for (const auto& r : rep.rows) {
      x.push_back(static_cast<double>(r.nodes));
      y.push_back(r.mean_seconds);
    }
    rep.pearson_r = pearson(x, y);
  }
  return rep;
}

}  // namespace gtree
