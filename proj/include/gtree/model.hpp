#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtree/ad/graph.hpp"
#include "gtree/ad/mlp.hpp"
#include "gtree/branches.hpp"
#include "gtree/io.hpp"
#include "gtree/kernels.hpp"
#include "gtree/tree.hpp"

namespace gtree {

enum class Aggregation { Sum, Mean, Max };
enum class Readout { Mean, Sum };

struct EncoderConfig {
  int num_layers = 3;
  int hidden_dim = 64;
  /// Weights on the j, k and p embeddings of each branch message.
  std::array<double, 3> alpha{1.0, 1.0, 1.0};
  Aggregation agg = Aggregation::Mean;
  Readout readout = Readout::Mean;
  /// Width of per-node attrs; 0 means a learned constant input embedding.
  int attr_dim = 0;
  ad::Activation activation = ad::Activation::ReLU;
  /// Affine layers inside each of the psi, phi and sigma networks.
  int mlp_depth = 2;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  TaskKind task = TaskKind::Classification;
  int num_classes = 2;
  /// Output width of the generative head (number of radial bases).
  int num_rbf = 16;
  /// Affine layers in the prediction head.
  int head_depth = 3;

  void validate() const;
  int output_width() const { return task == TaskKind::Classification ? num_classes : 1; }
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ModelParams {
  ModelConfig config;
  ad::ParamSet params;
};

/// Seeded initialization of every encoder, head and generative-head weight.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// True for parameters of the input embedder and message-passing layers.
bool is_encoder_param(const std::string& name);

/// Width of the per-branch geometric input: six features and six mask bits.
inline constexpr std::size_t kGeometricInputWidth = 12;

/// Constant per-tree inputs: node attrs, branch index lists and geometric features.
struct TreeInputs {
  std::size_t nodes = 0;
  ad::Tensor attrs;             // nodes x attr_dim (empty when attr_dim == 0)
  std::vector<int> owner;       // branch -> i
  std::vector<int> slot_j, slot_k, slot_p;  // kNone for padding
  ad::Tensor geometry;          // branches x 12
};

TreeInputs prepare_inputs(const GeometricTree& tree, Exec exec = Exec::Serial);

ad::MlpSpec psi_spec(const EncoderConfig& c);
ad::MlpSpec phi_spec(const EncoderConfig& c);
ad::MlpSpec sigma_spec(const EncoderConfig& c);
ad::MlpSpec head_spec(const ModelConfig& c);
ad::MlpSpec generative_spec(const ModelConfig& c);

/// Layer-0 node embeddings (nodes x hidden_dim).
ad::Var embed_inputs(ad::Graph& g, const TreeInputs& in, const ModelParams& model);

/// One round of branch message passing: layer `layer` maps h_prev to h_next.
ad::Var layer_forward(ad::Graph& g, const TreeInputs& in, ad::Var h_prev, const ModelParams& model, int layer);

struct Encoding {
  std::vector<ad::Var> layers;  // layer 0 (embedded attrs) .. num_layers
  ad::Var tree_vector;          // 1 x hidden_dim
  ad::Var final_nodes() const { return layers.back(); }
};

Encoding encode(ad::Graph& g, const TreeInputs& in, const ModelParams& model);

/// Head output: 1 x num_classes logits or a 1 x 1 regression value.
/// Throws ContractError when `task` differs from the model's task.
ad::Var predict(ad::Graph& g, ad::Var tree_vector, const ModelParams& model, TaskKind task);

/// Graph-free conveniences for frozen parameters.
ad::Tensor encode_tree_vector(const TreeInputs& in, const ModelParams& model);
ad::Tensor predict_scores(const TreeInputs& in, const ModelParams& model);

/// Scalar ranking score: class-1 minus class-0 logit for binary
/// classification, the regression value otherwise.
double decision_score(const ad::Tensor& scores, TaskKind task);

}  // namespace gtree
