#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deviloc/diffkernel/tape.h"

namespace deviloc::dk {

struct GradCheckConfig {
  int probes = 64;       // random coordinates probed (all if >= total)
  double epsilon = 1e-6;
  // Relative error = |a - n| / max(|a|, |n|, floor). The floor keeps
  // coordinates with vanishing gradient from dividing rounding noise by ~0.
  double floor = 1e-4;
  uint64_t seed = 0;
};

struct GradCheckProbe {
  std::string parameter;
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<GradCheckProbe> probes;
};

// `fn` records a scalar (1x1) function of `params` on the given context
// tape. The reverse-mode gradient is compared against central differences
// (f(theta + h) - f(theta - h)) / 2h at randomly probed coordinates.
using ScalarFn = std::function<Var(Tape&)>;

GradCheckResult GradCheck(const ScalarFn& fn, ParameterSet& params,
                          const GradCheckConfig& config = {});

}  // namespace deviloc::dk
