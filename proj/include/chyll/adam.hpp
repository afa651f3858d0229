#pragma once

#include "chyll/autodiff.hpp"

#include <vector>

namespace chyll::ad {

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Gradients are read from
// Tensor::grad (missing gradients count as zero) and are not cleared.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }
  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  AdamState state_;
};

// Free-function form used by tests: one update of `params` given `grads`.
void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state);

}  // namespace chyll::ad
