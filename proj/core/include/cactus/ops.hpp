#pragma once

#include <optional>
#include <span>

#include "cactus/tape.hpp"

namespace cactus {

// Differentiable primitives. Every op takes operands on the same tape and
// records its result there. Elementwise binary ops require identical shapes.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

/// max(x, 0). The subgradient at exactly 0 is 0.
Var relu(Var a);
/// |x| with subgradient 0 at 0.
Var abs_value(Var a);
/// Elementwise clamp to [lo, hi]; gradient passes where lo <= x <= hi.
Var clamp(Var a, double lo, double hi);

/// Sum of all elements (scalar result).
Var sum(Var a);
/// Mean of all elements (scalar result).
Var mean(Var a);
Var reshape(Var a, Shape shape);

/// [m, k] x [k, n] -> [m, n].
Var matmul(Var a, Var b);
/// Dense layer: x [B, in], w [out, in], bias [out] -> x w^T + bias, [B, out].
Var linear(Var x, Var w, std::optional<Var> bias);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Direct 2-D convolution: x [B, C, H, W], w [O, C, KH, KW], bias [O].
Var conv2d(Var x, Var w, std::optional<Var> bias, Conv2dGeometry geometry);
Shape conv2d_output_shape(const Shape& input, const Shape& weight, Conv2dGeometry geometry);

/// y[:, c, ...] = x[:, c, ...] * scale[c] (+ shift[c]); channel axis is 1.
Var channel_affine(Var x, Var scale, std::optional<Var> shift);

/// Batch normalisation with statistics of this batch (biased variance),
/// differentiating through the statistics. The batch mean/variance actually
/// used are written to the optional outputs.
Var batch_norm(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean = nullptr,
               Tensor* batch_var = nullptr);

/// Row-wise log-sum-exp: [B, K] -> [B], max-shifted for stability.
Var log_sum_exp(Var logits);
/// Per-sample softmax cross-entropy: [B, K] logits, B labels -> [B].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// [B, K] tensor taking lower[b, y_b] in the label column and upper elsewhere.
Var select_by_label(Var lower, Var upper, std::span<const int> labels);

}  // namespace cactus
