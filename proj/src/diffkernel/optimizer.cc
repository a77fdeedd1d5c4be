#include "deviloc/diffkernel/optimizer.h"

#include <cmath>

#include "deviloc/error.h"

namespace deviloc::dk {

void AdamW::Step(ParameterSet& params) {
  for (const auto& [name, p] : params) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      Throw(ErrorCode::kNoGradient, "parameter " + name + " has no gradient");
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, step_);
  const double c2 = 1.0 - std::pow(config_.beta2, step_);
  for (auto& [name, p] : params) {
    if (config_.weight_decay != 0.0) {
      p.value *= 1.0 - config_.lr * config_.weight_decay;
    }
    p.m = config_.beta1 * p.m + (1.0 - config_.beta1) * p.grad;
    p.v = config_.beta2 * p.v + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= config_.lr * (p.m.array() / c1) /
                       ((p.v.array() / c2).sqrt() + config_.eps);
  }
}

}  // namespace deviloc::dk
