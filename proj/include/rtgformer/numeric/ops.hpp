#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rtgformer/numeric/tensor.hpp"

namespace rtgf::numeric {

// Elementwise ops accept equal shapes, or a right operand holding exactly one
// row of cols(a) entries, which is broadcast down the rows of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// Rank-2 only.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// axis is 0 or 1 for rank-2 inputs; -1 means the last axis.
Tensor softmax(const Tensor& x, int axis = -1);

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
/// Constant rows therefore map to bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// tanh approximation used by GPT-2.
Tensor gelu(const Tensor& x);

Tensor concat(std::span<const Tensor> xs, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);
Tensor reshape(const Tensor& x, Shape shape);

/// mask must hold numel(x) entries; nonzero entries are replaced by value and
/// receive no gradient.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Forward identity; blocks gradient flow.
Tensor stop_gradient(const Tensor& x);

namespace testing {

/// Multiplies the backward rule of the named op by factor. Used only to prove
/// that gradient checks catch a broken rule; pass nullptr to reset.
void inject_gradient_fault(const char* op, double factor = 1.1);

}  // namespace testing

}  // namespace rtgf::numeric
