#pragma once

#include "deviloc/diffkernel/tape.h"

namespace deviloc::dk {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with decoupled weight decay:
//   theta <- theta - lr * wd * theta
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // Throws kNoGradient if any parameter lacks a gradient of its shape.
  void Step(ParameterSet& params);

  int steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  int step_ = 0;
};

}  // namespace deviloc::dk
