#include "gtree/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gtree/errors.hpp"
#include "gtree/geometry.hpp"

namespace gtree {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be at least 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be at least 1");
  if (attr_dim < 0) throw ConfigError("attr_dim must be non-negative");
  if (mlp_depth < 1) throw ConfigError("mlp_depth must be at least 1");
  for (double a : alpha)
    if (!std::isfinite(a)) throw ConfigError("alpha must be finite");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (task == TaskKind::Classification && num_classes < 2) throw ConfigError("need at least two classes");
  if (num_rbf < 2) throw ConfigError("num_rbf must be at least 2");
  if (head_depth < 1) throw ConfigError("head_depth must be at least 1");
}

namespace {

std::string agg_name(Aggregation a) {
  switch (a) {
    case Aggregation::Sum:
      return "sum";
    case Aggregation::Mean:
      return "mean";
    case Aggregation::Max:
      return "max";
  }
  return "mean";
}

Aggregation agg_from(const std::string& s) {
  if (s == "sum") return Aggregation::Sum;
  if (s == "mean") return Aggregation::Mean;
  if (s == "max") return Aggregation::Max;
  throw ConfigError("unknown aggregation '" + s + "'");
}

Readout readout_from(const std::string& s) {
  if (s == "mean") return Readout::Mean;
  if (s == "sum") return Readout::Sum;
  throw ConfigError("unknown readout '" + s + "'");
}

}  // namespace

json to_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers},
          {"hidden_dim", c.hidden_dim},
          {"alpha", c.alpha},
          {"agg", agg_name(c.agg)},
          {"readout", c.readout == Readout::Mean ? "mean" : "sum"},
          {"attr_dim", c.attr_dim},
          {"activation", ad::to_string(c.activation)},
          {"mlp_depth", c.mlp_depth}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<std::array<double, 3>>();
    c.agg = agg_from(j.value("agg", agg_name(c.agg)));
    c.readout = readout_from(j.value("readout", std::string("mean")));
    c.attr_dim = j.value("attr_dim", c.attr_dim);
    c.activation = ad::activation_from_string(j.value("activation", std::string("relu")));
    c.mlp_depth = j.value("mlp_depth", c.mlp_depth);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"encoder", to_json(c.encoder)},
          {"task", to_string(c.task)},
          {"num_classes", c.num_classes},
          {"num_rbf", c.num_rbf},
          {"head_depth", c.head_depth}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
    c.task = task_kind_from_string(j.value("task", std::string("classification")));
    c.num_classes = j.value("num_classes", c.num_classes);
    c.num_rbf = j.value("num_rbf", c.num_rbf);
    c.head_depth = j.value("head_depth", c.head_depth);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

ad::MlpSpec square_mlp(int in, int hidden, int out, int depth, ad::Activation act) {
  ad::MlpSpec s;
  s.activation = act;
  s.widths.push_back(in);
  for (int l = 0; l + 1 < depth; ++l) s.widths.push_back(hidden);
  s.widths.push_back(out);
  return s;
}

std::string layer_prefix(int layer, const char* part) { return "layer" + std::to_string(layer) + "." + part; }

}  // namespace

ad::MlpSpec psi_spec(const EncoderConfig& c) {
  return square_mlp(static_cast<int>(kGeometricInputWidth), c.hidden_dim, c.hidden_dim, c.mlp_depth, c.activation);
}
ad::MlpSpec phi_spec(const EncoderConfig& c) {
  return square_mlp(5 * c.hidden_dim, c.hidden_dim, c.hidden_dim, c.mlp_depth, c.activation);
}
ad::MlpSpec sigma_spec(const EncoderConfig& c) {
  return square_mlp(c.hidden_dim, c.hidden_dim, c.hidden_dim, c.mlp_depth, c.activation);
}
ad::MlpSpec head_spec(const ModelConfig& c) {
  return square_mlp(c.encoder.hidden_dim, c.encoder.hidden_dim, c.output_width(), c.head_depth, c.encoder.activation);
}
ad::MlpSpec generative_spec(const ModelConfig& c) {
  return square_mlp(c.encoder.hidden_dim + c.num_rbf, c.encoder.hidden_dim, c.num_rbf, 2, c.encoder.activation);
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams m{config, {}};
  std::mt19937_64 rng(seed);
  const auto& enc = config.encoder;
  if (enc.attr_dim > 0) {
    ad::init_mlp(m.params, "embed", ad::MlpSpec{{enc.attr_dim, enc.hidden_dim}, enc.activation, false}, rng);
  } else {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ad::Tensor c = ad::Tensor::matrix(1, static_cast<std::size_t>(enc.hidden_dim));
    for (double& v : c.values()) v = u(rng);
    m.params["embed.const"] = std::move(c);
  }
  for (int l = 0; l < enc.num_layers; ++l) {
    ad::init_mlp(m.params, layer_prefix(l, "psi"), psi_spec(enc), rng);
    ad::init_mlp(m.params, layer_prefix(l, "phi"), phi_spec(enc), rng);
    ad::init_mlp(m.params, layer_prefix(l, "sigma"), sigma_spec(enc), rng);
  }
  ad::init_mlp(m.params, "head", head_spec(config), rng);
  ad::init_mlp(m.params, "gen", generative_spec(config), rng);
  return m;
}

bool is_encoder_param(const std::string& name) {
  return name.rfind("embed.", 0) == 0 || name.rfind("layer", 0) == 0;
}

TreeInputs prepare_inputs(const GeometricTree& tree, Exec exec) {
  TreeInputs in;
  in.nodes = tree.size();
  const auto attr_dim = tree.attr_dim();
  if (attr_dim > 0) {
    in.attrs = ad::Tensor::matrix(in.nodes, attr_dim);
    for (std::size_t n = 0; n < in.nodes; ++n)
      std::copy(tree.nodes()[n].attrs.begin(), tree.nodes()[n].attrs.end(), in.attrs.data() + n * attr_dim);
  }
  const BranchSet bs = enumerate_branches(tree);
  const auto feats = extract_all_features(tree, bs, exec);
  const auto nb = bs.branches.size();
  in.owner.resize(nb);
  in.slot_j.resize(nb);
  in.slot_k.resize(nb);
  in.slot_p.resize(nb);
  in.geometry = ad::Tensor::matrix(nb, kGeometricInputWidth);
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& br = bs.branches[b];
    in.owner[b] = br.i;
    in.slot_j[b] = br.j;
    in.slot_k[b] = br.k;
    in.slot_p[b] = br.p;
    const auto vals = feats[b].values();
    for (std::size_t f = 0; f < 6; ++f) {
      in.geometry.at(b, f) = feats[b].mask[f] ? vals[f] : 0.0;
      in.geometry.at(b, 6 + f) = feats[b].mask[f] ? 1.0 : 0.0;
    }
  }
  return in;
}

ad::Var embed_inputs(ad::Graph& g, const TreeInputs& in, const ModelParams& model) {
  const auto& enc = model.config.encoder;
  if (enc.attr_dim > 0) {
    if (in.attrs.cols() != static_cast<std::size_t>(enc.attr_dim) || in.attrs.rows() != in.nodes)
      throw ShapeError("tree attrs width " + std::to_string(in.attrs.cols()) + " does not match encoder attr_dim " +
                       std::to_string(enc.attr_dim));
    return ad::mlp_forward(ad::MlpSpec{{enc.attr_dim, enc.hidden_dim}, enc.activation, false}, model.params, "embed",
                           g.constant(in.attrs));
  }
  auto it = model.params.find("embed.const");
  if (it == model.params.end()) throw ShapeError("model has no constant input embedding");
  return ad::broadcast_rows(g.parameter("embed.const", it->second), in.nodes);
}

ad::Var layer_forward(ad::Graph& g, const TreeInputs& in, ad::Var h_prev, const ModelParams& model, int layer) {
  const auto& enc = model.config.encoder;
  const auto& h = h_prev.value();
  if (h.cols() != static_cast<std::size_t>(enc.hidden_dim) || h.rows() != in.nodes)
    throw ShapeError("layer input must be nodes x hidden_dim");
  if (layer < 0 || layer >= enc.num_layers) throw ShapeError("layer index out of range");

  ad::Var agg;
  if (in.owner.empty()) {
    agg = g.constant(ad::Tensor::matrix(in.nodes, static_cast<std::size_t>(enc.hidden_dim)));
  } else {
    ad::Var geo = ad::mlp_forward(psi_spec(enc), model.params, layer_prefix(layer, "psi"), g.constant(in.geometry));
    ad::Var hi = ad::gather_rows(h_prev, in.owner);
    ad::Var hj = ad::scale(ad::gather_rows(h_prev, in.slot_j), enc.alpha[0]);
    ad::Var hk = ad::scale(ad::gather_rows(h_prev, in.slot_k), enc.alpha[1]);
    ad::Var hp = ad::scale(ad::gather_rows(h_prev, in.slot_p), enc.alpha[2]);
    ad::Var msg = ad::mlp_forward(phi_spec(enc), model.params, layer_prefix(layer, "phi"),
                                  ad::concat_cols({hi, hj, hk, hp, geo}));
    const auto kind = enc.agg == Aggregation::Sum    ? ad::SegmentReduce::Sum
                      : enc.agg == Aggregation::Mean ? ad::SegmentReduce::Mean
                                                     : ad::SegmentReduce::Max;
    agg = ad::segment_reduce(msg, in.owner, in.nodes, kind);
  }
  return ad::mlp_forward(sigma_spec(enc), model.params, layer_prefix(layer, "sigma"), agg);
}

Encoding encode(ad::Graph& g, const TreeInputs& in, const ModelParams& model) {
  if (in.nodes == 0) throw ShapeError("cannot encode an empty tree");
  Encoding e;
  e.layers.push_back(embed_inputs(g, in, model));
  for (int l = 0; l < model.config.encoder.num_layers; ++l)
    e.layers.push_back(layer_forward(g, in, e.layers.back(), model, l));
  e.tree_vector = model.config.encoder.readout == Readout::Mean ? ad::mean_rows(e.layers.back())
                                                                : ad::sum_rows(e.layers.back());
  return e;
}

ad::Var predict(ad::Graph& g, ad::Var tree_vector, const ModelParams& model, TaskKind task) {
  (void)g;
  if (task != model.config.task) throw ContractError("model was built for " + to_string(model.config.task) +
                                                     ", not " + to_string(task));
  return ad::mlp_forward(head_spec(model.config), model.params, "head", tree_vector);
}

ad::Tensor encode_tree_vector(const TreeInputs& in, const ModelParams& model) {
  ad::Graph g;
  return encode(g, in, model).tree_vector.value();
}

ad::Tensor predict_scores(const TreeInputs& in, const ModelParams& model) {
  ad::Graph g;
  const auto e = encode(g, in, model);
  return predict(g, e.tree_vector, model, model.config.task).value();
}

double decision_score(const ad::Tensor& scores, TaskKind task) {
  if (task == TaskKind::Regression || scores.size() == 1) return scores[0];
  // log-odds of class 1 against the rest
  double rest = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (c == 1) continue;
    const double hi = std::max(rest, scores[c]);
    rest = hi + std::log(std::exp(rest - hi) + std::exp(scores[c] - hi));
  }
  return scores[1] - rest;
}

}  // namespace gtree
