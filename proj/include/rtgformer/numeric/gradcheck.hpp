#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "rtgformer/numeric/tensor.hpp"

namespace rtgf::numeric {

// Gradients smaller than this are compared on an absolute scale; below it a
// central difference carries roundoff of the same order as the value itself.
inline constexpr double kGradCheckFloor = 1e-6;

/// |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor)
double relative_error(double analytic, double numeric);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of loss_fn against central differences
/// (f(w + eps) - f(w - eps)) / (2 eps), element by element, for every entry of
/// every parameter. loss_fn must rebuild the loss from the current parameter
/// values each time it is called and be deterministic. Parameter values are
/// restored before returning; existing gradients are cleared.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter> params, double eps = 1e-5);

/// Evaluates loss_fn with no tape active.
double evaluate(const std::function<Tensor()>& loss_fn);

}  // namespace rtgf::numeric
