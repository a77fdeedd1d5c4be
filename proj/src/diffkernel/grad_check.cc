#include "deviloc/diffkernel/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "deviloc/error.h"

namespace deviloc::dk {
namespace {

double Evaluate(const ScalarFn& fn) {
  Tape tape;
  return fn(tape).scalar();
}

}  // namespace

GradCheckResult GradCheck(const ScalarFn& fn, ParameterSet& params,
                          const GradCheckConfig& config) {
  for (auto& [name, p] : params) p.grad.resize(0, 0);
  {
    Tape tape;
    const Var out = fn(tape);
    tape.Backward(out);
  }

  std::vector<std::pair<Parameter*, int>> coords;
  for (auto& [name, p] : params) {
    for (int i = 0; i < p.value.size(); ++i) coords.emplace_back(&p, i);
  }
  if (static_cast<int>(coords.size()) > config.probes) {
    std::mt19937_64 rng(config.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(config.probes);
  }

  GradCheckResult result;
  for (const auto& [p, i] : coords) {
    double& theta = p->value.data()[i];
    const double original = theta;
    // Use the steps actually representable around theta.
    const double plus = original + config.epsilon;
    const double minus = original - config.epsilon;
    theta = plus;
    const double f_plus = Evaluate(fn);
    theta = minus;
    const double f_minus = Evaluate(fn);
    theta = original;

    GradCheckProbe probe;
    probe.parameter = p->name;
    probe.index = i;
    probe.analytic = p->grad.size() ? p->grad.data()[i] : 0.0;
    probe.numeric = (f_plus - f_minus) / (plus - minus);
    const double denom = std::max(
        {std::abs(probe.analytic), std::abs(probe.numeric), config.floor});
    probe.rel_error = std::abs(probe.analytic - probe.numeric) / denom;
    result.max_rel_error = std::max(result.max_rel_error, probe.rel_error);
    result.probes.push_back(probe);
  }
  return result;
}

}  // namespace deviloc::dk
