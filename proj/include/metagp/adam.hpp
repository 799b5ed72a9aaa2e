#pragma once

#include <vector>

#include "metagp/tape.hpp"

namespace metagp::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;  // added outside the square root
};

// Adam with bias correction. Moment slots are keyed by position in the
// parameter list, which must stay stable across steps; the update itself is
// per-parameter, so traversal order cannot change the result.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One update over matching param/grad lists. Throws NumericalError naming
  // the offending parameter on non-finite gradients, and if an update ever
  // produces a non-finite parameter value.
  void step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads);

  long steps_taken() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
};

}  // namespace metagp::nn
