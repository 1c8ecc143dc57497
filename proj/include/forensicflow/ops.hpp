#pragma once

// Differentiable ops over ff::Tensor. Every op records a backward closure on
// the current tape when one of its inputs is tracked.
//
// Binary elementwise ops broadcast only in two ways: a scalar (one-element)
// operand, or an operand whose shape is a trailing suffix of the other's.

#include <cstddef>
#include <vector>

#include "forensicflow/tensor.hpp"

namespace ff {

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product: a [B,m,k] · b [B,k,n] (or b [B,n,k] with transpose_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x [..., in] · weightᵀ + bias, weight [out, in]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Cross-correlation. x [N,C,H,W], weight [F, C/groups, kh, kw], bias [F] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

// --- normalization --------------------------------------------------------

Tensor softmax(const Tensor& x, int axis = -1);
/// Normalizes over the last axis, then applies gamma/beta of that size.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// x [N,C,H,W]; statistics per (sample, group of C/groups channels).
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Natural log; throws DomainError on any non-positive input.
Tensor log(const Tensor& x);
/// x^exponent for x >= 0.
Tensor pow_scalar(const Tensor& x, double exponent);
/// Gradient passes where lo <= x <= hi, zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);
/// x [N,C,H,W] scaled by gate [N,C] broadcast over H,W.
Tensor scale_channels(const Tensor& x, const Tensor& gate);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// --- reductions and pooling -----------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean along `axis`, which is removed from the shape.
Tensor mean(const Tensor& x, int axis);
/// No padding; gradient goes to the first (row-major) maximal element of each window.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h = 1, std::size_t out_w = 1);

// --- layout ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
/// Cyclic shift along `axis`: out[i] = x[(i - shift) mod n].
Tensor roll(const Tensor& x, int axis, long shift);
/// Rows of x (first axis) picked by `indices`.
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices);

// --- spectral (not differentiated) ----------------------------------------

/// Centered magnitude of the 2-D DFT of x [H,W]; the DC term lands at (H/2, W/2).
/// H and W must be powers of two.
Tensor rfft2_magnitude(const Tensor& x);

}  // namespace ff
