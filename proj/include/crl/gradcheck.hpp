#pragma once

#include <cstdint>
#include <string>

#include "crl/types.hpp"

namespace crl {

struct GradcheckOptions {
  int layer_points = 1000;
  int model_points = 1000;
  double step = 1e-6;
  std::uint64_t seed = 0;
  double layer_tolerance = 1e-5;
  double model_tolerance = 1e-4;
};

struct GradcheckReport {
  double layer_max_rel_err = 0.0;
  double model_max_rel_err = 0.0;
  int layer_points = 0;
  int model_points = 0;
  double layer_tolerance = 0.0;
  double model_tolerance = 0.0;

  bool passed() const { return layer_max_rel_err < layer_tolerance && model_max_rel_err < model_tolerance; }
};

/// ||a - n|| / max(||a||, ||n||), 0 when both vanish.
double relative_error(const Vec& analytic, const Vec& numeric);

/// Compares analytic gradients against central differences at random
/// interior points: single continuous layers (weights and inputs, random
/// upstream weighting) and small full models under the continuous surrogate
/// loss (logic weights, head, bias).
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

/// "PASS max_rel_err=..." or "FAIL max_rel_err=..." followed by the per-part numbers.
std::string render_gradcheck(const GradcheckReport& report);

}  // namespace crl
