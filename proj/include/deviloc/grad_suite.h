#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deviloc {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int probes = 0;

  bool passed() const { return max_rel_error <= tolerance; }
};

inline constexpr double kOpGradTolerance = 1e-5;
inline constexpr double kGraphGradTolerance = 1e-4;

// Central finite differences against reverse mode for every diffkernel op,
// the layers, and the composed PIN + aggregation + loss graph on a small
// synthetic query (N_r, N_o <= 16).
std::vector<GradSuiteEntry> RunGradCheckSuite(uint64_t seed = 0);

}  // namespace deviloc
