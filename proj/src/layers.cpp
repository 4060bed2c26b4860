#include "apss/layers.hpp"

#include <algorithm>
#include <cmath>

#include "blas.hpp"

namespace apss {

using detail::make_result;
using detail::Node;

std::size_t conv_output_length(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                               std::size_t pad_total) {
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (in + pad_total < span) {
    throw ShapeError("conv: input length " + std::to_string(in) + " too short for kernel span " +
                     std::to_string(span));
  }
  return (in + pad_total - span) / stride + 1;
}

namespace {

struct Conv2dPlan {
  std::size_t cin, t_in, f_in, cout, kt, kf, t_out, f_out;
  Conv2dGeometry g;
  std::size_t rows() const { return cin * kt * kf; }
  std::size_t cols() const { return t_out * f_out; }
};

// Output positions fo in [lo, hi) read f0 + fo*stride inside [0, f_in).
std::pair<std::size_t, std::size_t> valid_range(std::ptrdiff_t f0, std::size_t stride, std::size_t f_in,
                                                std::size_t f_out) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t lo = f0 < 0 ? (-f0 + s - 1) / s : 0;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(f_in) - 1 - f0;
  const std::ptrdiff_t hi = last < 0 ? 0 : std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(f_out), last / s + 1);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(ci*kt + i)*kf + j][to*f_out + fo] = x[ci][to*st + i*dt - pt][fo*sf + j*df - pl]
template <typename T>
void im2col(const T* x, const Conv2dPlan& p, T* cols) {
  const std::size_t ncols = p.cols();
  for (std::size_t ci = 0; ci < p.cin; ++ci) {
    for (std::size_t i = 0; i < p.kt; ++i) {
      for (std::size_t j = 0; j < p.kf; ++j) {
        T* row = cols + ((ci * p.kt + i) * p.kf + j) * ncols;
        for (std::size_t to = 0; to < p.t_out; ++to) {
          T* dst = row + to * p.f_out;
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * p.g.stride_t + i * p.g.dilation_t) -
                                    static_cast<std::ptrdiff_t>(p.g.pad_top);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(p.t_in)) {
            std::fill(dst, dst + p.f_out, T(0));
            continue;
          }
          const T* src = x + (ci * p.t_in + static_cast<std::size_t>(ti)) * p.f_in;
          const std::ptrdiff_t f0 = static_cast<std::ptrdiff_t>(j * p.g.dilation_f) -
                                    static_cast<std::ptrdiff_t>(p.g.pad_left);
          const auto [lo, hi] = valid_range(f0, p.g.stride_f, p.f_in, p.f_out);
          std::fill(dst, dst + lo, T(0));
          if (p.g.stride_f == 1) {
            std::copy(src + f0 + static_cast<std::ptrdiff_t>(lo), src + f0 + static_cast<std::ptrdiff_t>(hi), dst + lo);
          } else {
            for (std::size_t fo = lo; fo < hi; ++fo) dst[fo] = src[f0 + static_cast<std::ptrdiff_t>(fo * p.g.stride_f)];
          }
          std::fill(dst + hi, dst + p.f_out, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const Conv2dPlan& p, T* dx) {
  const std::size_t ncols = p.cols();
  for (std::size_t ci = 0; ci < p.cin; ++ci) {
    for (std::size_t i = 0; i < p.kt; ++i) {
      for (std::size_t j = 0; j < p.kf; ++j) {
        const T* row = cols + ((ci * p.kt + i) * p.kf + j) * ncols;
        for (std::size_t to = 0; to < p.t_out; ++to) {
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * p.g.stride_t + i * p.g.dilation_t) -
                                    static_cast<std::ptrdiff_t>(p.g.pad_top);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(p.t_in)) continue;
          const T* src = row + to * p.f_out;
          T* dst = dx + (ci * p.t_in + static_cast<std::size_t>(ti)) * p.f_in;
          const std::ptrdiff_t f0 = static_cast<std::ptrdiff_t>(j * p.g.dilation_f) -
                                    static_cast<std::ptrdiff_t>(p.g.pad_left);
          const auto [lo, hi] = valid_range(f0, p.g.stride_f, p.f_in, p.f_out);
          if (p.g.stride_f == 1) {
            T* d = dst + f0;
            for (std::size_t fo = lo; fo < hi; ++fo) d[fo] += src[fo];
          } else {
            for (std::size_t fo = lo; fo < hi; ++fo) dst[f0 + static_cast<std::ptrdiff_t>(fo * p.g.stride_f)] += src[fo];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dGeometry& geo) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  if (geo.stride_t == 0 || geo.stride_f == 0 || geo.dilation_t == 0 || geo.dilation_f == 0) {
    throw ConfigError("conv2d: stride and dilation must be positive");
  }
  Conv2dPlan p{};
  p.cin = x.dim(0);
  p.t_in = x.dim(1);
  p.f_in = x.dim(2);
  p.cout = weight.dim(0);
  p.kt = weight.dim(2);
  p.kf = weight.dim(3);
  p.g = geo;
  p.t_out = conv_output_length(p.t_in, p.kt, geo.stride_t, geo.dilation_t, geo.pad_top + geo.pad_bottom);
  p.f_out = conv_output_length(p.f_in, p.kf, geo.stride_f, geo.dilation_f, geo.pad_left + geo.pad_right);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != p.cout)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(p.cout) +
                     " output channels");
  }
  const std::size_t k = p.rows(), n = p.cols();
  std::vector<T> cols(k * n);
  im2col(x.data().data(), p, cols.data());
  std::vector<T> out(p.cout * n);
  if (bias.defined()) {
    for (std::size_t c = 0; c < p.cout; ++c) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(c * n), n, bias.data()[c]);
  }
  detail::gemm(false, false, p.cout, n, k, T(1), weight.data().data(), k, cols.data(), n, bias.defined() ? T(1) : T(0),
               out.data(), n);
  cols.clear();
  cols.shrink_to_fit();
  return make_result<T>({p.cout, p.t_out, p.f_out}, std::move(out), {x, weight, bias}, "conv2d",
                        [x, weight, bias, p](Node<T>& self) {
                          const std::size_t k = p.rows(), n = p.cols();
                          const T* g = self.grad.data();
                          if (bias.requires_grad()) {
                            auto& gb = bias.node()->ensure_grad();
                            for (std::size_t c = 0; c < p.cout; ++c) {
                              T s = 0;
                              for (std::size_t i = 0; i < n; ++i) s += g[c * n + i];
                              gb[c] += s;
                            }
                          }
                          std::vector<T> cols;
                          if (weight.requires_grad()) {
                            cols.resize(k * n);
                            im2col(x.data().data(), p, cols.data());
                            auto& gw = weight.node()->ensure_grad();
                            detail::gemm(false, true, p.cout, k, n, T(1), g, n, cols.data(), n, T(1), gw.data(), k);
                          }
                          if (x.requires_grad()) {
                            cols.resize(k * n);
                            detail::gemm(true, false, k, n, p.cout, T(1), weight.data().data(), k, g, n, T(0),
                                         cols.data(), n);
                            col2im_add(cols.data(), p, x.node()->ensure_grad().data());
                          }
                        });
}

std::vector<std::ptrdiff_t> conv1d_offsets(std::size_t kernel) {
  std::vector<std::ptrdiff_t> offsets(kernel);
  const auto left = static_cast<std::ptrdiff_t>(kernel / 2);
  for (std::size_t k = 0; k < kernel; ++k) offsets[k] = static_cast<std::ptrdiff_t>(k) - left;
  return offsets;
}

std::vector<std::ptrdiff_t> conv1d_transposed_offsets(std::size_t kernel) {
  auto offsets = conv1d_offsets(kernel);
  for (auto& o : offsets) o = -o;
  return offsets;
}

template <typename T>
Tensor<T> conv1d_taps(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                      const std::vector<std::ptrdiff_t>& offsets) {
  if (x.rank() < 2 || weight.rank() != 3 || weight.dim(0) != offsets.size() || weight.dim(1) != x.shape().back()) {
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t cin = x.shape().back();
  const std::size_t len = x.shape()[x.rank() - 2];
  const std::size_t batch = x.numel() / (cin * len);
  const std::size_t taps = offsets.size();
  const std::size_t cout = weight.dim(2);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv1d: bias shape " + shape_str(bias.shape()));
  }
  const std::size_t rows = batch * len, kdim = taps * cin;

  auto gather = [=](const T* src, T* cols) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < len; ++l) {
        T* dst = cols + (b * len + l) * kdim;
        for (std::size_t k = 0; k < taps; ++k) {
          const std::ptrdiff_t li = static_cast<std::ptrdiff_t>(l) + offsets[k];
          if (li < 0 || li >= static_cast<std::ptrdiff_t>(len)) {
            std::fill_n(dst + k * cin, cin, T(0));
          } else {
            const T* s = src + (b * len + static_cast<std::size_t>(li)) * cin;
            std::copy(s, s + cin, dst + k * cin);
          }
        }
      }
    }
  };

  std::vector<T> cols(rows * kdim);
  gather(x.data().data(), cols.data());
  std::vector<T> out(rows * cout);
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * cout));
  }
  detail::gemm(false, false, rows, cout, kdim, T(1), cols.data(), kdim, weight.data().data(), cout,
               bias.defined() ? T(1) : T(0), out.data(), cout);
  cols.clear();
  cols.shrink_to_fit();
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  return make_result<T>(std::move(out_shape), std::move(out), {x, weight, bias}, "conv1d",
                        [x, weight, bias, offsets, gather, batch, len, cin, cout, rows, kdim, taps](Node<T>& self) {
                          const T* g = self.grad.data();
                          if (bias.requires_grad()) {
                            auto& gb = bias.node()->ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cout; ++c) gb[c] += g[r * cout + c];
                            }
                          }
                          std::vector<T> cols(rows * kdim);
                          if (weight.requires_grad()) {
                            gather(x.data().data(), cols.data());
                            auto& gw = weight.node()->ensure_grad();
                            detail::gemm(true, false, kdim, cout, rows, T(1), cols.data(), kdim, g, cout, T(1),
                                         gw.data(), cout);
                          }
                          if (x.requires_grad()) {
                            detail::gemm(false, true, rows, kdim, cout, T(1), g, cout, weight.data().data(), cout,
                                         T(0), cols.data(), kdim);
                            auto& gx = x.node()->ensure_grad();
                            for (std::size_t b = 0; b < batch; ++b) {
                              for (std::size_t l = 0; l < len; ++l) {
                                const T* src = cols.data() + (b * len + l) * kdim;
                                for (std::size_t k = 0; k < taps; ++k) {
                                  const std::ptrdiff_t li = static_cast<std::ptrdiff_t>(l) + offsets[k];
                                  if (li < 0 || li >= static_cast<std::ptrdiff_t>(len)) continue;
                                  T* dst = gx.data() + (b * len + static_cast<std::size_t>(li)) * cin;
                                  for (std::size_t c = 0; c < cin; ++c) dst[c] += src[k * cin + c];
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, double eps) {
  if (x.rank() != 3) throw ShapeError("instance_norm: expected (C,T,F), got " + shape_str(x.shape()));
  const std::size_t channels = x.dim(0);
  const std::size_t n = x.dim(1) * x.dim(2);
  if (scale.numel() != channels || shift.numel() != channels) {
    throw ShapeError("instance_norm: affine parameters do not match " + std::to_string(channels) + " channels");
  }
  if (n == 0) throw ShapeError("instance_norm: empty channels");
  const auto xs = x.data();
  std::vector<T> normalized(xs.size());
  std::vector<T> inv_std(channels);
  std::vector<T> out(xs.size());
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = xs.data() + c * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += src[i];
    const double mu = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(src[i]) - mu;
      v += d * d;
    }
    v /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[c] = static_cast<T>(is);
    const T gamma = scale.data()[c], beta = shift.data()[c];
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = static_cast<T>((static_cast<double>(src[i]) - mu) * is);
      normalized[c * n + i] = xh;
      out[c * n + i] = gamma * xh + beta;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, scale, shift}, "instance_norm",
                        [x, scale, shift, normalized = std::move(normalized), inv_std, channels, n](Node<T>& self) {
                          const auto& g = self.grad;
                          if (scale.requires_grad() || shift.requires_grad()) {
                            for (std::size_t c = 0; c < channels; ++c) {
                              T gs = 0, gb = 0;
                              for (std::size_t i = 0; i < n; ++i) {
                                gs += g[c * n + i] * normalized[c * n + i];
                                gb += g[c * n + i];
                              }
                              if (scale.requires_grad()) scale.node()->ensure_grad()[c] += gs;
                              if (shift.requires_grad()) shift.node()->ensure_grad()[c] += gb;
                            }
                          }
                          if (!x.requires_grad()) return;
                          auto& gx = x.node()->ensure_grad();
                          for (std::size_t c = 0; c < channels; ++c) {
                            const T gamma = scale.data()[c];
                            double mean_d = 0.0, mean_dx = 0.0;
                            for (std::size_t i = 0; i < n; ++i) {
                              const double d = static_cast<double>(g[c * n + i]) * gamma;
                              mean_d += d;
                              mean_dx += d * normalized[c * n + i];
                            }
                            mean_d /= static_cast<double>(n);
                            mean_dx /= static_cast<double>(n);
                            for (std::size_t i = 0; i < n; ++i) {
                              const double d = static_cast<double>(g[c * n + i]) * gamma;
                              gx[c * n + i] +=
                                  static_cast<T>(inv_std[c] * (d - mean_d - normalized[c * n + i] * mean_dx));
                            }
                          }
                        });
}

namespace {
thread_local std::vector<std::uint8_t>* pattern_sink = nullptr;
}  // namespace

void set_activation_pattern_sink(std::vector<std::uint8_t>* sink) { pattern_sink = sink; }

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  if (x.rank() == 0 && slope.numel() != 1) throw ShapeError("prelu: scalar input needs a single slope");
  const std::size_t channels = x.rank() == 0 ? 1 : x.dim(0);
  const bool shared = slope.numel() == 1;
  if (!shared && slope.numel() != channels) {
    throw ShapeError("prelu: slope has " + std::to_string(slope.numel()) + " entries for " +
                     std::to_string(channels) + " channels");
  }
  const std::size_t inner = x.numel() / channels;
  const auto xs = x.data();
  const auto as = slope.data();
  std::vector<T> out(xs.size());
  for (std::size_t c = 0; c < channels; ++c) {
    const T a = as[shared ? 0 : c];
    for (std::size_t i = c * inner; i < (c + 1) * inner; ++i) out[i] = xs[i] >= 0 ? xs[i] : a * xs[i];
  }
  if (pattern_sink) {
    for (auto v : xs) pattern_sink->push_back(v >= 0 ? 1 : 0);
  }
  return make_result<T>(x.shape(), std::move(out), {x, slope}, "prelu",
                        [x, slope, channels, inner, shared](Node<T>& self) {
                          const auto xs = x.data();
                          const auto as = slope.data();
                          const auto& g = self.grad;
                          if (x.requires_grad()) {
                            auto& gx = x.node()->ensure_grad();
                            for (std::size_t c = 0; c < channels; ++c) {
                              const T a = as[shared ? 0 : c];
                              for (std::size_t i = c * inner; i < (c + 1) * inner; ++i) {
                                gx[i] += xs[i] >= 0 ? g[i] : a * g[i];
                              }
                            }
                          }
                          if (slope.requires_grad()) {
                            auto& ga = slope.node()->ensure_grad();
                            for (std::size_t c = 0; c < channels; ++c) {
                              T s = 0;
                              for (std::size_t i = c * inner; i < (c + 1) * inner; ++i) {
                                if (xs[i] < 0) s += g[i] * xs[i];
                              }
                              ga[shared ? 0 : c] += s;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> swiglu(const Tensor<T>& x) {
  if (x.rank() == 0 || x.shape().back() % 2 != 0) {
    throw ShapeError("swiglu: last axis must have an even size, got " + shape_str(x.shape()));
  }
  const std::size_t axis = x.rank() - 1;
  const std::size_t half = x.shape().back() / 2;
  auto a = slice(x, axis, 0, half);
  auto b = slice(x, axis, half, 2 * half);
  return mul(mul(a, sigmoid(a)), b);
}

template <typename T>
Tensor<T> rms_group_norm(const Tensor<T>& x, const Tensor<T>& scale, std::size_t groups, double eps) {
  if (x.rank() == 0) throw ShapeError("rms_group_norm: scalar input");
  const std::size_t channels = x.shape().back();
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("rms_group_norm: " + std::to_string(channels) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (scale.numel() != channels) throw ShapeError("rms_group_norm: scale does not match channels");
  const std::size_t width = channels / groups;
  const std::size_t positions = x.numel() / channels;
  const auto xs = x.data();
  const auto ss = scale.data();
  std::vector<T> inv_rms(positions * groups);
  std::vector<T> out(xs.size());
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = p * channels + gi * width;
      double s = 0.0;
      for (std::size_t i = 0; i < width; ++i) s += static_cast<double>(xs[base + i]) * xs[base + i];
      const T inv = static_cast<T>(1.0 / std::sqrt(s / static_cast<double>(width) + eps));
      inv_rms[p * groups + gi] = inv;
      for (std::size_t i = 0; i < width; ++i) out[base + i] = xs[base + i] * inv * ss[gi * width + i];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, scale}, "rms_group_norm",
                        [x, scale, inv_rms, groups, width, positions, channels](Node<T>& self) {
                          const auto xs = x.data();
                          const auto ss = scale.data();
                          const auto& g = self.grad;
                          if (scale.requires_grad()) {
                            auto& gsc = scale.node()->ensure_grad();
                            for (std::size_t p = 0; p < positions; ++p) {
                              for (std::size_t c = 0; c < channels; ++c) {
                                gsc[c] += g[p * channels + c] * xs[p * channels + c] * inv_rms[p * groups + c / width];
                              }
                            }
                          }
                          if (!x.requires_grad()) return;
                          auto& gx = x.node()->ensure_grad();
                          for (std::size_t p = 0; p < positions; ++p) {
                            for (std::size_t gi = 0; gi < groups; ++gi) {
                              const std::size_t base = p * channels + gi * width;
                              const T inv = inv_rms[p * groups + gi];
                              T dot = 0;
                              for (std::size_t i = 0; i < width; ++i) {
                                dot += g[base + i] * ss[gi * width + i] * xs[base + i] * inv;
                              }
                              dot /= static_cast<T>(width);
                              for (std::size_t i = 0; i < width; ++i) {
                                const T dy = g[base + i] * ss[gi * width + i];
                                const T yh = xs[base + i] * inv;
                                gx[base + i] += inv * (dy - yh * dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> pixel_shuffle_freq(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 3) throw ShapeError("pixel_shuffle_freq: expected (C*r,T,F), got " + shape_str(x.shape()));
  if (r == 0 || x.dim(0) % r != 0) {
    throw ConfigError("pixel_shuffle_freq: " + std::to_string(x.dim(0)) + " channels not divisible by " +
                      std::to_string(r));
  }
  if (r == 1) return x;
  const std::size_t c = x.dim(0) / r, t = x.dim(1), f = x.dim(2);
  auto y = reshape(x, {c, r, t, f});
  y = permute(y, {0, 2, 3, 1});
  return reshape(y, {c, t, f * r});
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(0), out = weight.dim(1);
  auto flat = reshape(x, {x.numel() / in, in});
  auto y = add(matmul(flat, weight), bias);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  return reshape(y, std::move(out_shape));
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(std::move(shape), std::move(values), true);
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(const ConvSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  const std::size_t fan_in = spec.in_ch * spec.kernel_t * spec.kernel_f;
  weight = uniform_tensor<T>({spec.out_ch, spec.in_ch, spec.kernel_t, spec.kernel_f},
                             1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  bias = Tensor<T>::zeros({spec.out_ch}, true);
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, spec_.geometry);
}

template <typename T>
void Conv2d<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
Conv1d<T>::Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, bool transposed, std::mt19937_64& rng)
    : offsets_(transposed ? conv1d_transposed_offsets(kernel) : conv1d_offsets(kernel)) {
  weight = uniform_tensor<T>({kernel, in_ch, out_ch}, 1.0 / std::sqrt(static_cast<double>(in_ch * kernel)), rng);
  bias = Tensor<T>::zeros({out_ch}, true);
}

template <typename T>
Tensor<T> Conv1d<T>::operator()(const Tensor<T>& x) const {
  return conv1d_taps(x, weight, bias, offsets_);
}

template <typename T>
void Conv1d<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
SubpixelConv2d<T>::SubpixelConv2d(std::size_t in_ch, std::size_t out_ch, std::size_t upscale, std::mt19937_64& rng)
    : upscale_(upscale) {
  if (upscale == 0) throw ConfigError("subpixel_conv2d: upscale factor must be >= 1");
  ConvSpec spec;
  spec.in_ch = in_ch;
  spec.out_ch = out_ch * upscale;
  spec.kernel_t = 1;
  spec.kernel_f = 3;
  spec.geometry.pad_left = 1;
  spec.geometry.pad_right = 1;
  conv_ = Conv2d<T>(spec, rng);
}

template <typename T>
Tensor<T> SubpixelConv2d<T>::operator()(const Tensor<T>& x) const {
  return pixel_shuffle_freq(conv_(x), upscale_);
}

template <typename T>
void SubpixelConv2d<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  conv_.collect_parameters(prefix + ".conv", out);
}

template <typename T>
InstanceNorm<T>::InstanceNorm(std::size_t channels)
    : scale(Tensor<T>::full({channels}, T(1), true)), shift(Tensor<T>::zeros({channels}, true)) {}

template <typename T>
void InstanceNorm<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".scale", scale);
  out.emplace_back(prefix + ".shift", shift);
}

template <typename T>
PReLU<T>::PReLU(std::size_t channels, T init) : slope(Tensor<T>::full({channels}, init, true)) {}

template <typename T>
void PReLU<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".slope", slope);
}

template <typename T>
RmsGroupNorm<T>::RmsGroupNorm(std::size_t channels, std::size_t groups)
    : scale(Tensor<T>::full({channels}, T(1), true)), groups_(groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("rms_group_norm: " + std::to_string(channels) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
}

template <typename T>
void RmsGroupNorm<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".scale", scale);
}

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(std::size_t channels, std::size_t heads, std::mt19937_64& rng)
    : channels_(channels), heads_(heads) {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("mhsa: " + std::to_string(channels) + " channels not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  w_qkv = uniform_tensor<T>({channels, 3 * channels}, bound, rng);
  b_qkv = Tensor<T>::zeros({3 * channels}, true);
  w_out = uniform_tensor<T>({channels, channels}, bound, rng);
  b_out = Tensor<T>::zeros({channels}, true);
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::operator()(const Tensor<T>& x, Tensor<T>* weights_out) const {
  if (x.rank() != 3 || x.dim(2) != channels_) {
    throw ShapeError("mhsa: expected (N,S," + std::to_string(channels_) + "), got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), s = x.dim(1), h = heads_, dk = channels_ / heads_;
  auto qkv = linear(x, w_qkv, b_qkv);                 // (N,S,3C)
  qkv = reshape(qkv, {n, s, 3, h, dk});
  qkv = permute(qkv, {2, 0, 3, 1, 4});                // (3,N,h,S,dk)
  auto pick = [&](std::size_t i) { return reshape(slice(qkv, 0, i, i + 1), {n * h, s, dk}); };
  auto q = pick(0), k = pick(1), v = pick(2);
  auto scores = mul_scalar(matmul(q, permute(k, {0, 2, 1})), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
  auto weights = softmax(scores, 2);
  if (weights_out) *weights_out = weights;
  auto ctx = matmul(weights, v);                      // (N*h,S,dk)
  ctx = permute(reshape(ctx, {n, h, s, dk}), {0, 2, 1, 3});
  ctx = reshape(ctx, {n, s, channels_});
  return linear(ctx, w_out, b_out);
}

template <typename T>
void MultiHeadSelfAttention<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".w_qkv", w_qkv);
  out.emplace_back(prefix + ".b_qkv", b_qkv);
  out.emplace_back(prefix + ".w_out", w_out);
  out.emplace_back(prefix + ".b_out", b_out);
}

#define APSS_INSTANTIATE_LAYERS(T)                                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv2dGeometry&);       \
  template Tensor<T> conv1d_taps(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                          \
                                 const std::vector<std::ptrdiff_t>&);                                           \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);               \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> swiglu(const Tensor<T>&);                                                                  \
  template Tensor<T> rms_group_norm(const Tensor<T>&, const Tensor<T>&, std::size_t, double);                   \
  template Tensor<T> pixel_shuffle_freq(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template class Conv2d<T>;                                                                                     \
  template class Conv1d<T>;                                                                                     \
  template class SubpixelConv2d<T>;                                                                             \
  template class InstanceNorm<T>;                                                                               \
  template class PReLU<T>;                                                                                      \
  template class RmsGroupNorm<T>;                                                                               \
  template class MultiHeadSelfAttention<T>;

APSS_INSTANTIATE_LAYERS(float)
APSS_INSTANTIATE_LAYERS(double)

}  // namespace apss
