#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "apss/ops.hpp"
#include "apss/tensor.hpp"

namespace apss {

template <typename T>
using NamedParameters = std::vector<std::pair<std::string, Tensor<T>>>;

// ---------------------------------------------------------------------------
// Functional forms. 2-D convolutions take (channels, time, freq) tensors;
// 1-D convolutions, RMS group norm and attention take channels-last
// sequences (batch, length, channels).
// ---------------------------------------------------------------------------

struct Conv2dGeometry {
  std::size_t stride_t = 1, stride_f = 1;
  std::size_t dilation_t = 1, dilation_f = 1;
  std::size_t pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
};

// L_out = floor((L_in + pad_total - dilation*(k-1) - 1) / stride) + 1
std::size_t conv_output_length(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                               std::size_t pad_total);

// Cross-correlation of x (C_in,T,F) with weight (C_out,C_in,kt,kf) plus optional bias (C_out).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dGeometry& geo);

// y[n,l,:] = bias + sum_k x[n, l + offsets[k], :] . weight[k], weight (K, C_in, C_out).
// Positions outside [0, L) read as zero.
template <typename T>
Tensor<T> conv1d_taps(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                      const std::vector<std::ptrdiff_t>& offsets);

// Length-preserving tap offsets: conv uses pad (K/2, K-1-K/2); the
// transposed form is its adjoint.
std::vector<std::ptrdiff_t> conv1d_offsets(std::size_t kernel);
std::vector<std::ptrdiff_t> conv1d_transposed_offsets(std::size_t kernel);

// Per-channel standardization over (T,F), then affine. x: (C,T,F).
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, double eps = 1e-8);

// slope has one entry per channel (axis 0 of x) or a single shared entry.
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope);

// While set, every prelu call on this thread appends one byte per element
// (1 where x >= 0). Lets finite-difference checks detect kink crossings.
void set_activation_pattern_sink(std::vector<std::uint8_t>* sink);

// Splits the last axis into halves (a, b) and returns a*sigmoid(a)*b.
template <typename T>
Tensor<T> swiglu(const Tensor<T>& x);

// Last-axis groups divided by their RMS (no mean subtraction), times a per-channel scale.
template <typename T>
Tensor<T> rms_group_norm(const Tensor<T>& x, const Tensor<T>& scale, std::size_t groups, double eps = 1e-8);

// (C*r, T, F) -> (C, T, F*r) with out[c,t,f*r+j] = in[c*r+j,t,f].
template <typename T>
Tensor<T> pixel_shuffle_freq(const Tensor<T>& x, std::size_t r);

// x (..., in) times weight (in, out) plus bias (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// ---------------------------------------------------------------------------
// Parameterized layers
// ---------------------------------------------------------------------------

struct ConvSpec {
  std::size_t in_ch = 1, out_ch = 1;
  std::size_t kernel_t = 1, kernel_f = 3;
  Conv2dGeometry geometry;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const ConvSpec& spec, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;
  const ConvSpec& spec() const { return spec_; }

  Tensor<T> weight, bias;

 private:
  ConvSpec spec_;
};

template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, bool transposed, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

  Tensor<T> weight, bias;  // weight (K, in, out)

 private:
  std::vector<std::ptrdiff_t> offsets_;
};

template <typename T>
class SubpixelConv2d {
 public:
  SubpixelConv2d() = default;
  SubpixelConv2d(std::size_t in_ch, std::size_t out_ch, std::size_t upscale, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;
  std::size_t upscale() const { return upscale_; }

 private:
  Conv2d<T> conv_;
  std::size_t upscale_ = 1;
};

template <typename T>
class InstanceNorm {
 public:
  InstanceNorm() = default;
  explicit InstanceNorm(std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const { return instance_norm(x, scale, shift); }
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

  Tensor<T> scale, shift;
};

template <typename T>
class PReLU {
 public:
  PReLU() = default;
  explicit PReLU(std::size_t channels, T init = T(0.25));
  Tensor<T> operator()(const Tensor<T>& x) const { return prelu(x, slope); }
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

  Tensor<T> slope;
};

template <typename T>
class RmsGroupNorm {
 public:
  RmsGroupNorm() = default;
  RmsGroupNorm(std::size_t channels, std::size_t groups);
  Tensor<T> operator()(const Tensor<T>& x) const { return rms_group_norm(x, scale, groups_); }
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

  Tensor<T> scale;

 private:
  std::size_t groups_ = 1;
};

template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t channels, std::size_t heads, std::mt19937_64& rng);

  // x: (N, S, C). Scaled dot-product attention per head, no mask, no
  // positional encoding. If weights_out is given it receives (N*heads, S, S).
  Tensor<T> operator()(const Tensor<T>& x, Tensor<T>* weights_out = nullptr) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;
  std::size_t heads() const { return heads_; }

  Tensor<T> w_qkv, b_qkv, w_out, b_out;

 private:
  std::size_t channels_ = 0, heads_ = 1;
};

extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class Conv1d<float>;
extern template class Conv1d<double>;
extern template class SubpixelConv2d<float>;
extern template class SubpixelConv2d<double>;
extern template class InstanceNorm<float>;
extern template class InstanceNorm<double>;
extern template class PReLU<float>;
extern template class PReLU<double>;
extern template class RmsGroupNorm<float>;
extern template class RmsGroupNorm<double>;
extern template class MultiHeadSelfAttention<float>;
extern template class MultiHeadSelfAttention<double>;

}  // namespace apss
