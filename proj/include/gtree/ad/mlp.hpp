#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gtree/ad/graph.hpp"

namespace gtree::ad {

enum class Activation { ReLU, Tanh, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Stack of affine layers. `widths` lists input width then each layer's
/// output width, so a spec with n+1 widths has n layers. The activation
/// follows every layer except the last unless `activate_output` is set.
struct MlpSpec {
  std::vector<int> widths;
  Activation activation = Activation::ReLU;
  bool activate_output = false;

  std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  /// Throws ShapeError unless there is at least one layer and all widths are positive.
  void validate() const;
};

/// Parameter names are `<prefix>.w<l>` (in x out) and `<prefix>.b<l>` (1 x out).
/// Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec, std::mt19937_64& rng);

/// Records the forward pass of x (rows are samples) on x's graph.
Var mlp_forward(const MlpSpec& spec, const ParamSet& params, const std::string& prefix, Var x);

/// Tensor-in, tensor-out evaluation on a private graph.
Tensor mlp_forward(const MlpSpec& spec, const ParamSet& params, const std::string& prefix, const Tensor& x);

Var apply_activation(Activation a, Var x);

}  // namespace gtree::ad
