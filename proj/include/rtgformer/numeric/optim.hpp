#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rtgformer/numeric/tensor.hpp"

namespace rtgf::numeric {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
  AdamWConfig config;
  std::int64_t step = 0;
  double last_lr = 0.0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// Zeroed accumulators shaped like params.
OptimizerState make_optimizer_state(std::span<const Parameter> params, AdamWConfig config = {});

/// One AdamW update from the gradients currently held by params. A parameter
/// without a gradient is treated as having a zero gradient.
///
/// Every gradient is checked before anything is written, so a non-finite
/// entry aborts the step with params and state untouched.
void adamw_step(std::span<Parameter> params, OptimizerState& state, double lr);

/// Global L2 norm over all parameter gradients.
double global_grad_norm(std::span<const Parameter> params);

/// Rescales all gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Parameter> params, double max_norm);

}  // namespace rtgf::numeric
