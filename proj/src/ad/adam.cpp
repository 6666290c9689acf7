#include "gtree/ad/adam.hpp"

#include <cmath>

#include "gtree/errors.hpp"

namespace gtree::ad {

void adam_step(ParamSet& params, const GradSet& grads, AdamState& state, double lr, const AdamOptions& opt) {
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) throw ShapeError("gradient for unknown parameter " + name);
    Tensor& p = pit->second;
    if (p.size() != g.size()) throw ShapeError("gradient shape mismatch for " + name);
    Tensor& m = state.m.try_emplace(name, Tensor(p.shape(), 0.0)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.shape(), 0.0)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
    }
  }
}

}  // namespace gtree::ad
