#pragma once

#include <span>
#include <vector>

#include "kneeatt/graph.hpp"
#include "kneeatt/kernels.hpp"

namespace kneeatt {

// Differentiable ops. Image tensors are (B, H, W, C); feature tensors (B, F).

/// Cross-correlation plus bias. Weights are (k, k, Cin, Cout), bias (Cout).
Var conv2d(Var input, Var weights, Var bias, std::size_t stride, Padding padding);

/// Max pooling; gradient goes to the first (row-major) maximal element of each window.
Var maxpool2d(Var input, std::size_t kernel, std::size_t stride, Padding padding = Padding::Valid);

/// Affine map (B, F) x (F, U) + (U).
Var dense(Var input, Var weights, Var bias);

/// Convolution with unshared 1x1 weights: weights (H, W, C), bias (H, W), output (B, H, W, 1).
Var locally_connected_1x1(Var input, Var weights, Var bias);

Var relu(Var x);
Var sigmoid(Var x);
/// Softmax over the last axis with max subtraction.
Var softmax(Var x);

/// Global average pooling (B, H, W, C) -> (B, C).
Var gap(Var x);

/// Multiplies a (B, H, W, C) volume by a (B, H, W, 1) mask broadcast over channels.
Var mask_multiply(Var volume, Var mask);

/// Concatenates (B, Fi) tensors along the feature axis.
Var concat(std::span<const Var> inputs);

/// Mean over the batch of -log(max(p_true, 1e-12)). Rows of onehot must be one-hot.
Var cross_entropy(Var probs, const Tensor& onehot);

inline constexpr double kLogClamp = 1e-12;

/// x (B, N) divided row-wise by d (B, 1), with d floored at `floor`.
/// Rows that hit the floor are reported through Graph::warn.
Var divide_rows(Var x, Var denom, double floor);

Var add(Var a, Var b);
Var multiply(Var a, Var b);
Var scale(Var x, double factor);
/// Sum of all elements, as a (1) tensor.
Var sum(Var x);
/// sum(x * coeffs) for a constant tensor of the same shape.
Var dot(Var x, const Tensor& coeffs);
/// sum_b weights[b] * scalars[b].
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

// Plain tensor helpers shared with evaluation code.
Tensor softmax_rows(const Tensor& logits);
Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace kneeatt
