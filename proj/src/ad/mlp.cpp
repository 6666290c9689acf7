#include "gtree/ad/mlp.hpp"

#include <cmath>

#include "gtree/errors.hpp"

namespace gtree::ad {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU:
      return "relu";
    case Activation::Tanh:
      return "tanh";
    case Activation::Identity:
      return "identity";
  }
  return "relu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + name + "'");
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ShapeError("an MLP needs at least one layer");
  for (int w : widths)
    if (w <= 0) throw ShapeError("MLP widths must be positive");
}

void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const auto fan_in = static_cast<std::size_t>(spec.widths[l]);
    const auto fan_out = static_cast<std::size_t>(spec.widths[l + 1]);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w = Tensor::matrix(fan_in, fan_out);
    for (double& v : w.values()) v = u(rng);
    Tensor b = Tensor::matrix(1, fan_out);
    for (double& v : b.values()) v = u(rng);
    params[prefix + ".w" + std::to_string(l)] = std::move(w);
    params[prefix + ".b" + std::to_string(l)] = std::move(b);
  }
}

Var apply_activation(Activation a, Var x) {
  switch (a) {
    case Activation::ReLU:
      return relu(x);
    case Activation::Tanh:
      return tanh(x);
    case Activation::Identity:
      return x;
  }
  return x;
}

namespace {
const Tensor& lookup(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ShapeError("missing parameter " + name);
  return it->second;
}
}  // namespace

Var mlp_forward(const MlpSpec& spec, const ParamSet& params, const std::string& prefix, Var x) {
  spec.validate();
  Graph& g = *x.graph;
  if (x.value().cols() != static_cast<std::size_t>(spec.widths.front()))
    throw ShapeError("MLP " + prefix + " expects input width " + std::to_string(spec.widths.front()) + ", got " +
                     std::to_string(x.value().cols()));
  Var h = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::string wn = prefix + ".w" + std::to_string(l);
    const std::string bn = prefix + ".b" + std::to_string(l);
    const Tensor& w = lookup(params, wn);
    const Tensor& b = lookup(params, bn);
    if (w.rows() != static_cast<std::size_t>(spec.widths[l]) || w.cols() != static_cast<std::size_t>(spec.widths[l + 1]) ||
        b.cols() != w.cols())
      throw ShapeError("parameter shape mismatch in " + prefix);
    h = add_row(matmul(h, g.parameter(wn, w)), g.parameter(bn, b));
    if (l + 1 < spec.layers() || spec.activate_output) h = apply_activation(spec.activation, h);
  }
  return h;
}

Tensor mlp_forward(const MlpSpec& spec, const ParamSet& params, const std::string& prefix, const Tensor& x) {
  Graph g;
  return mlp_forward(spec, params, prefix, g.constant(x)).value();
}

}  // namespace gtree::ad
