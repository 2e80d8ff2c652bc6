#include "rtgformer/numeric/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rtgf::numeric {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

double evaluate(const std::function<Tensor()>& loss_fn) {
  NoTape no_tape;
  return loss_fn().item();
}

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter> params, double eps) {
  for (auto& p : params) p.tensor.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tape::Scope scope(&tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (auto& p : params) {
      auto g = p.tensor.grad();
      analytic.emplace_back(p.tensor.numel(), 0.0);
      std::copy(g.begin(), g.end(), analytic.back().begin());
    }
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.data_mut();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double up = evaluate(loss_fn);
      w[i] = saved - eps;
      const double down = evaluate(loss_fn);
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[k][i], numeric);
      ++result.checked;
      if (err > result.max_relative_error || result.worst_parameter.empty()) {
        result.max_relative_error = err;
        result.worst_parameter = params[k].name;
        result.worst_index = i;
        result.worst_analytic = analytic[k][i];
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& p : params) p.tensor.zero_grad();
  return result;
}

}  // namespace rtgf::numeric
