#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "apss/tensor.hpp"

namespace apss {

// Broadcasting rule for binary elementwise ops: operands are aligned on
// their trailing dimensions, and the smaller one may only differ by
// leading singleton dimensions. A scalar therefore broadcasts to anything,
// a (F) vector broadcasts over (T,F), but (C,1,1) does NOT broadcast over
// (C,T,F).
Shape broadcast_shape(const Shape& a, const Shape& b);

enum class UnaryKind { neg, cos, sin, exp, log, sigmoid, abs, sqrt, square };
enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> elementwise(UnaryKind kind, const Tensor<T>& x);
template <typename T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryKind::div, a, b); }
template <typename T> Tensor<T> neg(const Tensor<T>& x) { return elementwise(UnaryKind::neg, x); }
template <typename T> Tensor<T> cos(const Tensor<T>& x) { return elementwise(UnaryKind::cos, x); }
template <typename T> Tensor<T> sin(const Tensor<T>& x) { return elementwise(UnaryKind::sin, x); }
template <typename T> Tensor<T> exp(const Tensor<T>& x) { return elementwise(UnaryKind::exp, x); }
template <typename T> Tensor<T> log(const Tensor<T>& x) { return elementwise(UnaryKind::log, x); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return elementwise(UnaryKind::sigmoid, x); }
template <typename T> Tensor<T> abs(const Tensor<T>& x) { return elementwise(UnaryKind::abs, x); }
template <typename T> Tensor<T> sqrt(const Tensor<T>& x) { return elementwise(UnaryKind::sqrt, x); }
template <typename T> Tensor<T> square(const Tensor<T>& x) { return elementwise(UnaryKind::square, x); }

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T value);

// Principal angle of (x, y) in (-pi, pi]; atan2(0, 0) = 0 with zero gradient.
template <typename T>
Tensor<T> atan2(const Tensor<T>& y, const Tensor<T>& x);

// Batched product of (..., M, K) and (..., K, N). Batch dims follow the
// leading-singleton broadcasting rule; rank-2 operands broadcast over all batches.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

enum class ReduceKind { sum, mean, rms };
inline constexpr double kReduceEps = 1e-8;

// Reduced axes are removed from the output shape. rms = sqrt(mean(x^2) + 1e-8).
template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceKind kind, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

// Inverted dropout; identity when p == 0 or gradient tracking is off.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng);

}  // namespace apss
