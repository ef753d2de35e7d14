#pragma once

// Differentiable tensor operations. All ops are instantiated for float (model
// training) and double (gradient checks against finite differences).

#include <cstdint>
#include <vector>

#include "mtlface/core/autograd.hpp"

namespace mtlface::ops {

template <typename T> using V = Var<T>;

// ---- elementwise ----------------------------------------------------------
template <typename T> V<T> add(const V<T>& a, const V<T>& b);
template <typename T> V<T> sub(const V<T>& a, const V<T>& b);
template <typename T> V<T> mul(const V<T>& a, const V<T>& b);
template <typename T> V<T> add_scalar(const V<T>& a, T c);
template <typename T> V<T> mul_scalar(const V<T>& a, T c);
template <typename T> V<T> neg(const V<T>& a);
template <typename T> V<T> square(const V<T>& a);
template <typename T> V<T> exp(const V<T>& a);
template <typename T> V<T> log(const V<T>& a);
template <typename T> V<T> sigmoid(const V<T>& a);
template <typename T> V<T> tanh(const V<T>& a);
template <typename T> V<T> leaky_relu(const V<T>& a, T slope);
template <typename T> V<T> relu(const V<T>& a);

/// Broadcasts size-1 dimensions of `a` (rank <= 4) to `shape`.
template <typename T> V<T> expand(const V<T>& a, const Shape& shape);

// ---- shape ------------------------------------------------------------------
template <typename T> V<T> reshape(const V<T>& a, const Shape& shape);
/// Rows [start, start+len) along dim 0. The forward value aliases `a`.
template <typename T> V<T> narrow(const V<T>& a, std::int64_t start, std::int64_t len);
template <typename T> V<T> concat(const std::vector<V<T>>& parts, int dim);
/// out[i] = a[index[i]] along dim 0; indices may repeat.
template <typename T> V<T> index_select(const V<T>& a, const std::vector<std::int64_t>& index);

// ---- reductions -------------------------------------------------------------
template <typename T> V<T> sum(const V<T>& a);
template <typename T> V<T> mean(const V<T>& a);
/// Reduces one dimension, keeping it with size 1.
template <typename T> V<T> sum_dim(const V<T>& a, int dim);
template <typename T> V<T> mean_dim(const V<T>& a, int dim);
template <typename T> V<T> max_dim(const V<T>& a, int dim);

// ---- linear algebra -----------------------------------------------------------
template <typename T>
V<T> matmul(const V<T>& a, const V<T>& b, bool trans_a = false, bool trans_b = false);
/// x[B,in] * w[out,in]^T + b[out]; `b` may be undefined.
template <typename T> V<T> linear(const V<T>& x, const V<T>& w, const V<T>& b);

// ---- convolution / resampling --------------------------------------------------
/// x[B,Cin,H,W], w[Cout,Cin,kh,kw], optional b[Cout].
template <typename T>
V<T> conv2d(const V<T>& x, const V<T>& w, const V<T>& b, int stride, int pad);
/// Bilinear 2x upsampling with half-pixel centers.
template <typename T> V<T> upsample2x(const V<T>& x);

// ---- normalization ---------------------------------------------------------------
/// Training mode normalizes with batch statistics and, when the running
/// tensors are defined, folds them into the running estimates.
template <typename T>
V<T> batch_norm(const V<T>& x, const V<T>& gamma, const V<T>& beta,
                Tensor<T> running_mean, Tensor<T> running_var, bool training,
                T momentum = T(0.1), T eps = T(1e-5));
/// Per-(sample, channel) normalization over H,W without affine parameters.
template <typename T> V<T> instance_norm(const V<T>& x, T eps = T(1e-5));
/// Unit L2 norm along the last dimension of a 2-d input.
template <typename T> V<T> normalize_rows(const V<T>& x, T eps = T(1e-12));
/// Unit L2 norm along the channel dimension of a 4-d input.
template <typename T> V<T> normalize_channels(const V<T>& x, T eps = T(1e-10));
/// w / sigma_max(w) with sigma estimated by one power iteration on `u`.
/// `u` (length = w.dim(0)) is updated in place when `training`.
template <typename T>
V<T> spectral_normalize(const V<T>& w, Tensor<T> u, bool training);

// ---- classification -----------------------------------------------------------
template <typename T> V<T> log_softmax(const V<T>& x);
template <typename T> V<T> softmax(const V<T>& x);
/// out[b] = x[b, index[b]].
template <typename T> V<T> pick(const V<T>& x, const std::vector<int>& index);

// ---- gradient reversal ---------------------------------------------------------
/// Identity forward; backward multiplies the incoming gradient by -scale.
template <typename T> V<T> grad_reverse(const V<T>& x, T scale = T(1));

// ---- constants -------------------------------------------------------------------
template <typename T> V<T> constant(Tensor<T> t) { return V<T>(std::move(t), false); }

}  // namespace mtlface::ops
