#pragma once

// Differentiable tensor operations. All functions are pure: they read their
// operands and return a new tensor, recording a backward closure when any
// operand requires a gradient and recording is enabled.
//
// Reductions run in a fixed row-major order so results are bitwise
// reproducible for a given input.

#include "nafrssr/tensor.hpp"

namespace nafrssr::ops {

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

/// Grouped 2-D cross-correlation. `weight` is [cout, cin/groups, kh, kw];
/// `bias` is either undefined or [1, cout, 1, 1].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions options = {});

/// Normalizes the channel vector at every (n, h, w) position to zero mean and
/// unit population variance, then applies per-channel `scale` and `shift`
/// (both [1, c, 1, 1]).
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = 1e-6);

/// Softmax along the width axis, treating every (n, c, h) as one row.
Tensor softmax_rows(const Tensor& x);

/// Cross-view attention along epipolar rows. For every (n, h) the width axis
/// is the sequence: A = softmax(Ql Qr^T / sqrt(c)) with Q as w x c matrices,
/// and the result is A V.
Tensor row_attention(const Tensor& q_left, const Tensor& q_right, const Tensor& v);

Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

/// Mean over h*w per (n, c), summed in row-major order.
Tensor global_avg_pool(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// x * s where s is [1 or n, 1 or c, 1, 1], broadcast over the remaining
/// axes. Covers per-channel vectors, per-sample channel vectors and scalars.
Tensor mul_broadcast(const Tensor& x, const Tensor& s);

/// Channels [begin, begin + count).
Tensor channel_slice(const Tensor& x, int begin, int count);

/// Stacks `count` copies of x along the batch axis.
Tensor tile_batch(const Tensor& x, int count);

/// Sum of all elements as a [1,1,1,1] tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Sum of (a - b)^2 over all elements as a [1,1,1,1] tensor.
Tensor squared_error_sum(const Tensor& a, const Tensor& b);

}  // namespace nafrssr::ops
