#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmfusion/matrix.hpp"

namespace mmfusion {

// Central differences (f(x+h) - f(x-h)) / 2h for every entry of x, which
// is perturbed in place and restored.
Matrix numeric_gradient(const std::function<double()>& objective, Matrix& x, double step);

// |analytic - numeric| / max(|analytic|, |numeric|) in Frobenius norm; the
// denominator is floored at 1e-6 so vanishing gradients compare on an
// absolute scale.
double relative_error(const Matrix& analytic, const Matrix& numeric);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 5;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Test hook: operator whose analytic gradient is deliberately scaled by
  // 1.01 so the detector must flag it.
  std::string perturb;
};

struct GradcheckResult {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t seeds = 0;
  bool passed = false;
};

std::vector<std::string> gradcheck_operators();
GradcheckResult run_gradcheck(const std::string& op, const GradcheckOptions& options);
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options);

}  // namespace mmfusion
