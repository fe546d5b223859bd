#pragma once

#include <cstddef>
#include <span>

#include "hpm/diffmath/tape.hpp"

namespace hpm::diff {

// Differentiable primitives. Every op records its backward rule on the tape of
// its first argument; all arguments must live on the same tape.

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x[rows x d] + b[d] broadcast over rows.
Var add_row(Var x, Var b);

/// Scalar sum / mean of all entries, shape {1}.
Var sum(Var x);
Var mean(Var x);
/// Per-row mean, [rows x d] -> [rows x 1].
Var row_mean(Var x);

/// Rowwise (x - mean) / sqrt(var + eps) * gain + bias, population variance.
Var layer_norm(Var x, Var gain, Var bias, double eps);

/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(Var x);

/// sigma(z) = e^z / (e^z + 1), evaluated on the non-overflowing branch.
Var logistic(Var x);
/// log sigma(z) = -softplus(-z).
Var log_logistic(Var x);
/// softplus(z) = log(1 + e^z) = max(z, 0) + log1p(e^-|z|).
Var softplus(Var x);

/// Each row divided by max(||row||_2, eps).
Var l2_normalize_rows(Var x, double eps);

/// Max-subtracted softmax over each row.
Var softmax_rows(Var x);

/// Rows of x in the order given; backward scatters (and accumulates duplicates).
Var gather_rows(Var x, std::span<const std::size_t> ids);

/// Stack a on top of b; column counts must agree.
Var concat_rows(Var a, Var b);

/// Multi-head scaled dot-product attention. q, k, v are [rows x d] with rows a
/// multiple of seg_len; attention is restricted to each contiguous block of
/// seg_len rows (one sample), and d splits into `heads` equal slices.
Var attention(Var q, Var k, Var v, std::size_t heads, std::size_t seg_len);

// Plain-value helpers shared by ops and callers.
double stable_logistic(double z);
double stable_softplus(double z);
double gelu_value(double x);

}  // namespace hpm::diff
