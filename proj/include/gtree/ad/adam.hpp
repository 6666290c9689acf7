#pragma once

#include "gtree/ad/tensor.hpp"

namespace gtree::ad {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  GradSet m;
  GradSet v;
  long step = 0;
};

/// One bias-corrected Adam update. Only parameters present in `grads` move,
/// which is how frozen parameters are excluded.
void adam_step(ParamSet& params, const GradSet& grads, AdamState& state, double lr, const AdamOptions& opt = {});

}  // namespace gtree::ad
