#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtree/ad/checkpoint.hpp"
#include "gtree/io.hpp"
#include "gtree/kernels.hpp"
#include "gtree/model.hpp"
#include "gtree/objectives.hpp"
#include "gtree/synthetic.hpp"

namespace gtree {

struct Dataset {
  std::vector<GeometricTree> trees;
  TaskKind task = TaskKind::Classification;
  int num_classes = 2;
  /// Class names in index order when the labels were strings.
  std::vector<std::string> class_names;

  std::size_t size() const { return trees.size(); }
  /// Numeric target of tree t (class index or regression value). Throws DataError if unlabeled.
  double target(std::size_t t) const;
  std::vector<double> targets(std::span<const std::size_t> idx) const;
};

Dataset dataset_from_samples(std::vector<SyntheticSample> samples, TaskKind task);
/// Unlabeled dataset for pretraining.
Dataset dataset_from_trees(std::vector<GeometricTree> trees);
/// Loads every manifest entry; relative paths resolve against `base_dir`.
Dataset load_dataset(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle cut by the ratios; every index lands in exactly one part.
Split make_split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Seeded subset of `train` holding about `fraction` of it; classification
/// keeps at least one tree of every class present.
std::vector<std::size_t> label_subset(const Dataset& data, std::span<const std::size_t> train, double fraction,
                                      std::uint64_t seed);

enum class TrainMode { Supervised, Pretrain, Finetune };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr = 1e-3;
  /// Learning-rate multiplier applied after `patience` epochs without a new best validation loss.
  double decay_ratio = 0.9;
  int patience = 10;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  ModelConfig model;
  /// Explicit basis; otherwise K = model.num_rbf centers up to the 95th
  /// percentile edge length of the training split.
  std::optional<RadialBasisConfig> basis;
  SslConfig ssl;
  TrainMode mode = TrainMode::Supervised;
  double label_fraction = 1.0;
  bool freeze_encoder = false;
  Exec exec = Exec::Parallel;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep the values already in `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  /// Self-supervised runs only.
  double train_generative = 0.0;
  double train_order = 0.0;
  double val_violation_rate = 0.0;
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::string metric_name;
  std::optional<double> test_metric;
  std::size_t train_size = 0, val_size = 0, test_size = 0;
  std::uint64_t seed = 0;
  nlohmann::json config;

  nlohmann::json to_json() const;
  /// step,generative,order,total,val_total,lr,seconds
  std::string loss_curve_csv() const;
  /// True when every loss, lr and metric matches bit for bit (timings ignored).
  bool same_metrics(const RunReport& other) const;
};

struct TrainResult {
  ModelParams model;
  RunReport report;
  RadialBasisConfig basis;
};

/// Minibatch Adam on the supervised loss with best-validation selection.
TrainResult train_supervised(const Dataset& data, const TrainConfig& config);

/// Optimizes the self-supervised loss; the returned model keeps only encoder weights.
TrainResult pretrain_ssl(const Dataset& data, const TrainConfig& config);

/// Checkpoint metadata describing a pretrained encoder.
nlohmann::json encoder_meta(const ModelConfig& model, const RadialBasisConfig& basis);

/// Starts from the checkpoint's encoder weights and a fresh head. Throws
/// CheckpointError when the checkpoint's encoder config differs from
/// config.model.encoder or weights are missing.
TrainResult finetune(const ad::Checkpoint& encoder, const Dataset& data, const TrainConfig& config);

/// Mann-Whitney AUC; ties count one half. Throws MetricError unless both classes appear.
double auc(std::span<const double> scores, std::span<const int> labels);
double mae(std::span<const double> preds, std::span<const double> targets);
double pearson(std::span<const double> x, std::span<const double> y);

/// Decision scores of trees[idx] under frozen parameters.
std::vector<double> score_trees(const ModelParams& model, const Dataset& data, std::span<const std::size_t> idx,
                                Exec exec = Exec::Parallel);

/// AUC (binary), accuracy (multi-class) or MAE (regression) on trees[idx].
double evaluate_metric(const ModelParams& model, const Dataset& data, std::span<const std::size_t> idx,
                       Exec exec = Exec::Parallel);
std::string metric_name(const ModelConfig& config);

/// Fraction of ancestor-descendant pairs whose final embeddings break the
/// componentwise ordering.
double order_violation_rate(const ModelParams& model, std::span<const GeometricTree> trees,
                            const OrderLossConfig& config, std::uint64_t seed);

using TreeScorer = std::function<double(const GeometricTree&)>;

TreeScorer model_scorer(const ModelParams& model);

struct InvarianceRow {
  double magnitude = 0.0;
  double max_deviation = 0.0;
  std::optional<double> auc;
};

struct InvarianceReport {
  double max_deviation = 0.0;
  std::vector<InvarianceRow> rows;
};

/// For every magnitude, applies n_transforms random rotations with
/// translations of that length to every tree and compares scores with the
/// untransformed ones. AUC is reported for binary classification data.
InvarianceReport invariance_test(const TreeScorer& scorer, const Dataset& data, int n_transforms, std::uint64_t seed,
                                 std::span<const double> magnitudes, Exec exec = Exec::Parallel);

struct BenchRow {
  std::size_t nodes = 0;
  std::size_t trees = 0;
  std::size_t branches = 0;
  double total_seconds = 0.0;
  double mean_seconds = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double pearson_r = 0.0;
};

/// Times one forward+backward pass per tree on a single worker at each node count.
BenchReport bench_scaling(std::span<const std::size_t> node_counts, int trees_per_point, const ModelConfig& config,
                          std::uint64_t seed);

}  // namespace gtree
