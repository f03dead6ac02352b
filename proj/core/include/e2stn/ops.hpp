#pragma once

#include <cstddef>
#include <vector>

#include "e2stn/tensor.hpp"

namespace e2stn {

// Every op accepts optional leading batch axes unless noted and records a
// gradient rule when any input requires grad.

/// [..., i, k] x [..., k, j]. Either side may be rank 2 and is then
/// broadcast across the other side's batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with suffix broadcasting: b's shape must equal a's shape or
// a trailing suffix of it (bias rows, per-feature scales).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor relu(const Tensor& x);
Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor clamp(const Tensor& x, double lo, double hi);
/// log(max(x, floor)); gradient is zero where the floor is active.
Tensor log_clamped(const Tensor& x, double floor);

/// Softmax over the last axis with max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Normalizes each row of the last axis (population variance), then
/// applies gamma * xhat + beta. gamma and beta have the last axis' size.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// Divides each last-axis row by (row sum + eps). Intended for
/// nonnegative inputs such as adjacency matrices.
Tensor normalize_rows(const Tensor& x, double eps);

// Full reductions return a rank-0 tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Population variance (divides by N).
Tensor variance(const Tensor& x);
/// sqrt(sum x^2); the gradient at 0 is taken as 0.
Tensor l2_norm(const Tensor& x);

// Reductions over the trailing `axes` axes; the result keeps the leading ones.
Tensor sum_last(const Tensor& x, std::size_t axes = 1);
Tensor mean_last(const Tensor& x, std::size_t axes = 1);
Tensor variance_last(const Tensor& x, std::size_t axes = 1);
Tensor l2_norm_last(const Tensor& x, std::size_t axes = 1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last_two(const Tensor& x);
/// General axis permutation; out.shape[i] = x.shape[perm[i]].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
/// Columns [start, start + length) of the last (band) axis.
Tensor slice_band(const Tensor& x, std::size_t start, std::size_t length);

/// [..., C, m] -> [..., h, C, m / h].
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [..., h, C, p] -> [..., C, h * p].
Tensor merge_heads(const Tensor& x);

enum class ConvKind { Standard, Depthwise, Pointwise };

struct Padding {
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Stride-1 2-D cross-correlation (no kernel flip) over x of shape
/// [Cin, H, W] or [N, Cin, H, W].
///
/// Weights are [Cout, Cin, kh, kw] for Standard, [Cin * D, 1, kh, kw] for
/// Depthwise (output channel o reads input channel o / D) and
/// [Cout, Cin, 1, 1] for Pointwise. `bias`, if defined, has Cout entries.
Tensor conv2d(const Tensor& x, const Tensor& weight, ConvKind kind, Padding padding = {},
              const Tensor& bias = Tensor());

/// Mean over rows of -sum(y * log(max(p, 1e-12))). `probs` and `one_hot`
/// are [P] or [N, P]; each row of `one_hot` must be a one-hot vector.
Tensor cross_entropy(const Tensor& probs, const Tensor& one_hot);

/// Builds an [N, P] one-hot tensor.
Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

}  // namespace e2stn
