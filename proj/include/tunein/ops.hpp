#pragma once

// Differentiable tensor operations.
//
// Binary elementwise ops broadcast only when the second operand is a scalar
// or its shape is a trailing suffix of the first operand's shape; anything
// else raises ShapeError. matmul broadcasts leading batch dimensions when one
// side is a plain matrix.

#include <cstddef>
#include <vector>

#include "tunein/tensor.hpp"

namespace tunein {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> neg(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
// slope is a single-element tensor (learnable PReLU coefficient).
template <typename T> Tensor<T> prelu(const Tensor<T>& a, const Tensor<T>& slope);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
// max(a, floor); gradient is zero where the floor is active.
template <typename T> Tensor<T> clamp_min(const Tensor<T>& a, T floor);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, std::size_t axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim = false);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Rows of a along axis 0.
template <typename T> Tensor<T> index_select(const Tensor<T>& a, const std::vector<std::size_t>& rows);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

// x[L] -> frames[I, window], I = (L - window) / stride + 1.
template <typename T> Tensor<T> unfold1d(const Tensor<T>& x, std::size_t window, std::size_t stride);
// frames[I, window] -> y[(I - 1) * stride + window], summing overlaps.
template <typename T> Tensor<T> fold1d(const Tensor<T>& frames, std::size_t stride);

// x[I, F...] -> [S, K, F...] with hop K/2 and tail zero padding.
template <typename T> Tensor<T> frame_segments(const Tensor<T>& x, std::size_t segment);
// [S, K, F...] -> [length, F...]; overlapping positions are averaged.
template <typename T> Tensor<T> overlap_add_segments(const Tensor<T>& seg, std::size_t length);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

}  // namespace tunein
