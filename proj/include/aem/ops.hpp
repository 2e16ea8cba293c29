#pragma once

#include <array>
#include <memory>
#include <vector>

#include "aem/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the active
// tape (see TapeScope) when at least one input requires grad.
//
// Binary ops broadcast `b` onto `a` only when b is a scalar or b's shape,
// with leading 1s stripped, is a suffix of a's shape.
namespace aem::ops {

struct Pad2d {
  Index top = 0, bottom = 0, left = 0, right = 0;
};

// Elementwise.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

// Activations. `slope` holds one value per entry of `axis` (or a single shared value).
template <typename T> Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope, int axis = 1);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

// Reductions to a rank-0 tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// a[..., M, K] x b[..., K, N]; batch dims equal or one side has a single batch.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] W[out, in]^T + bias[out]. bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Cross-correlation, x[N,C,H,W], w[O,C,kh,kw] (odd kernels), symmetric padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Index stride = 1, Index pad = 0);

// Spatial ops act on the last two axes.
template <typename T> Tensor<T> pad_zero(const Tensor<T>& x, Pad2d pad);
template <typename T> Tensor<T> crop(const Tensor<T>& x, Index top, Index left, Index height, Index width);
template <typename T> Tensor<T> reflect_pad(const Tensor<T>& x, Pad2d pad);
template <typename T> Tensor<T> roll2d(const Tensor<T>& x, Index shift_y, Index shift_x);
template <typename T> Tensor<T> flip_w(const Tensor<T>& x);
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, Index factor);
// [N,C,H,W] -> [N,4C,H/2,W/2], channel blocks ordered (0,0),(1,0),(0,1),(1,1) by (dy,dx).
template <typename T> Tensor<T> space_to_depth2(const Tensor<T>& x);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length);
template <typename T> std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, const std::vector<Index>& sizes);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, int axis, T eps = T(1e-5));

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);

/// out.flat[i] = x.flat[index[i]], or 0 where index[i] < 0. Backward scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::shared_ptr<const std::vector<Index>> index);

// Non-differentiable helpers.
template <typename To, typename From> Tensor<To> cast(const Tensor<From>& x);

}  // namespace aem::ops
