#include "rtgformer/numeric/optim.hpp"

#include <cmath>

namespace rtgf::numeric {

OptimizerState make_optimizer_state(std::span<const Parameter> params, AdamWConfig config) {
  OptimizerState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.tensor.numel(), 0.0);
    state.second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
  return state;
}

void adamw_step(std::span<Parameter> params, OptimizerState& state, double lr) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " parameters but state holds " +
                     std::to_string(state.first_moment.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (state.first_moment[k].size() != p.tensor.numel()) {
      throw ShapeError("adamw_step: accumulator for " + p.name + " does not match " + shape_str(p.tensor.shape()));
    }
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient in parameter " + p.name);
    }
  }

  const auto& cfg = state.config;
  state.step += 1;
  state.last_lr = lr;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.data_mut();
    auto g = params[k].tensor.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i]);
    }
  }
}

double global_grad_norm(std::span<const Parameter> params) {
  double total = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(std::span<Parameter> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (std::isfinite(norm) && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      auto& g = p.tensor.node()->grad;
      for (auto& x : g) x *= factor;
    }
  }
  return norm;
}

}  // namespace rtgf::numeric
