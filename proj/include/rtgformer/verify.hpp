#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rtgf::verify {

inline constexpr double kGradcheckThreshold = 1e-4;

struct GradcheckComponent {
  std::string name;
  double worst = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckComponent> components;
  double threshold = kGradcheckThreshold;
  double seconds = 0.0;

  bool passed() const;
  const GradcheckComponent& worst() const;
};

/// Finite-difference check of every primitive, the loss, and the full model
/// (d_model 8, one head, two layers, K 6, two memory segments, condition
/// mode; plus a linear-mode model) in float64. Memory blocks are held fixed
/// while differencing, matching the stop-gradient they carry.
GradcheckReport run_gradcheck_suite(std::uint64_t seed = 0, double threshold = kGradcheckThreshold);

struct StopGradientInstance {
  // Largest |gradient| reaching the parameters that produced the cache.
  double autodiff_through_cache = 0.0;
  // Largest |autodiff - finite difference with the cache frozen| over the
  // parameters of the current segment.
  double fd_gap = 0.0;
  // Largest |d loss / d producer weight| when the cache is recomputed; shows
  // the cache really feeds the loss.
  double cache_sensitivity = 0.0;
  std::size_t checked = 0;
};

struct StopGradientReport {
  std::vector<StopGradientInstance> instances;
  double max_autodiff_through_cache = 0.0;
  double max_fd_gap = 0.0;
  double min_cache_sensitivity = 0.0;
};

/// Randomized instances of a two-segment memory model. The cache is built
/// under the same tape as the loss from a separate copy of the parameters, so
/// any gradient leaking through the cached keys and values would land there.
StopGradientReport check_stop_gradient_law(std::size_t instances = 20, std::uint64_t seed = 0);

}  // namespace rtgf::verify
