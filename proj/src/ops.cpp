#include "apss/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "blas.hpp"

namespace apss {

using detail::make_result;
using detail::Node;

namespace {

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
void accumulate(const Tensor<T>& t, auto&& fn) {
  if (!t.requires_grad()) return;
  fn(t.node()->ensure_grad());
}

// Visits every output index with the matching operand indices. The larger
// operand always has n elements; the smaller one repeats with period n_small.
template <typename F>
inline void broadcast_loop(std::size_t n, std::size_t na, std::size_t nb, F&& f) {
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (na == n) {
    if (nb == 1) {
      for (std::size_t i = 0; i < n; ++i) f(i, i, 0);
    } else {
      for (std::size_t base = 0; base < n; base += nb)
        for (std::size_t j = 0; j < nb; ++j) f(base + j, base + j, j);
    }
  } else if (na == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i, 0, i);
  } else {
    for (std::size_t base = 0; base < n; base += na)
      for (std::size_t j = 0; j < na; ++j) f(base + j, j, base + j);
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const Shape sa = strip_leading_ones(a);
  const Shape sb = strip_leading_ones(b);
  const std::size_t na = shape_numel(a), nb = shape_numel(b);
  if (na >= nb && is_suffix(sb, a)) return a.size() >= b.size() ? a : b;
  if (nb > na && is_suffix(sa, b)) return b.size() >= a.size() ? b : a;
  throw ShapeError("incompatible shapes for broadcasting: " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
Tensor<T> elementwise(UnaryKind kind, const Tensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  const char* name = "unary";
  switch (kind) {
    case UnaryKind::neg: name = "neg"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = -xs[i]; break;
    case UnaryKind::cos: name = "cos"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::cos(xs[i]); break;
    case UnaryKind::sin: name = "sin"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::sin(xs[i]); break;
    case UnaryKind::exp: name = "exp"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::exp(xs[i]); break;
    case UnaryKind::log: name = "log"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::log(xs[i]); break;
    case UnaryKind::sigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xs[i]));
      break;
    case UnaryKind::abs: name = "abs"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::abs(xs[i]); break;
    case UnaryKind::sqrt: name = "sqrt"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::sqrt(xs[i]); break;
    case UnaryKind::square: name = "square"; for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * xs[i]; break;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, name, [x, kind](Node<T>& self) {
    accumulate(x, [&](std::vector<T>& gx) {
      const auto xs = x.data();
      const auto& y = self.data;
      const auto& g = self.grad;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        T d = 0;
        switch (kind) {
          case UnaryKind::neg: d = -1; break;
          case UnaryKind::cos: d = -std::sin(xs[i]); break;
          case UnaryKind::sin: d = std::cos(xs[i]); break;
          case UnaryKind::exp: d = y[i]; break;
          case UnaryKind::log: d = T(1) / xs[i]; break;
          case UnaryKind::sigmoid: d = y[i] * (T(1) - y[i]); break;
          case UnaryKind::abs: d = xs[i] > 0 ? T(1) : (xs[i] < 0 ? T(-1) : T(0)); break;
          case UnaryKind::sqrt: d = y[i] > 0 ? T(0.5) / y[i] : T(0); break;
          case UnaryKind::square: d = T(2) * xs[i]; break;
        }
        gx[i] += d * g[i];
      }
    });
  });
}

template <typename T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const T* as = a.data().data();
  const T* bs = b.data().data();
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<T> out(n);
  T* o = out.data();
  const char* name = "binary";
  switch (kind) {
    case BinaryKind::add:
      name = "add";
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = as[ia] + bs[ib]; });
      break;
    case BinaryKind::sub:
      name = "sub";
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = as[ia] - bs[ib]; });
      break;
    case BinaryKind::mul:
      name = "mul";
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = as[ia] * bs[ib]; });
      break;
    case BinaryKind::div:
      name = "div";
      if (debug_checks()) {
        for (std::size_t i = 0; i < nb; ++i) {
          if (bs[i] == T(0)) throw NumericalError("div: exact zero denominator at flat index " + std::to_string(i));
        }
      }
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = as[ia] / bs[ib]; });
      break;
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a, b}, name, [a, b, kind](Node<T>& self) {
    const T* as = a.data().data();
    const T* bs = b.data().data();
    const std::size_t na = a.numel(), nb = b.numel();
    const T* g = self.grad.data();
    const std::size_t n = self.grad.size();
    accumulate(a, [&](std::vector<T>& gav) {
      T* ga = gav.data();
      switch (kind) {
        case BinaryKind::add:
        case BinaryKind::sub:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
          break;
        case BinaryKind::mul:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * bs[ib]; });
          break;
        case BinaryKind::div:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] / bs[ib]; });
          break;
      }
    });
    accumulate(b, [&](std::vector<T>& gbv) {
      T* gb = gbv.data();
      switch (kind) {
        case BinaryKind::add:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += g[i]; });
          break;
        case BinaryKind::sub:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] -= g[i]; });
          break;
        case BinaryKind::mul:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * as[ia]; });
          break;
        case BinaryKind::div:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            const T bv = bs[ib];
            gb[ib] -= g[i] * as[ia] / (bv * bv);
          });
          break;
      }
    });
  });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::max(xs[i], lo);
  return make_result<T>(x.shape(), std::move(out), {x}, "clamp_min", [x, lo](Node<T>& self) {
    accumulate(x, [&](std::vector<T>& gx) {
      const auto xs = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (xs[i] > lo) gx[i] += self.grad[i];
      }
    });
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] + value;
  return make_result<T>(x.shape(), std::move(out), {x}, "add_scalar", [x](Node<T>& self) {
    accumulate(x, [&](std::vector<T>& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T value) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * value;
  return make_result<T>(x.shape(), std::move(out), {x}, "mul_scalar", [x, value](Node<T>& self) {
    accumulate(x, [&](std::vector<T>& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * value;
    });
  });
}

template <typename T>
Tensor<T> atan2(const Tensor<T>& y, const Tensor<T>& x) {
  if (y.shape() != x.shape()) {
    throw ShapeError("atan2: shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(x.shape()));
  }
  const auto ys = y.data();
  const auto xs = x.data();
  std::vector<T> out(ys.size());
  constexpr T pi = std::numbers::pi_v<T>;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] == T(0) && xs[i] == T(0)) {
      out[i] = 0;
      continue;
    }
    T a = std::atan2(ys[i], xs[i]);
    if (a <= -pi) a = pi;
    out[i] = a;
  }
  return make_result<T>(y.shape(), std::move(out), {y, x}, "atan2", [y, x](Node<T>& self) {
    const auto ys = y.data();
    const auto xs = x.data();
    const auto& g = self.grad;
    auto denom = [&](std::size_t i) { return xs[i] * xs[i] + ys[i] * ys[i]; };
    accumulate(y, [&](std::vector<T>& gy) {
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const T d = denom(i);
        if (d > 0) gy[i] += g[i] * xs[i] / d;
      }
    });
    accumulate(x, [&](std::vector<T>& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T d = denom(i);
        if (d > 0) gx[i] -= g[i] * ys[i] / d;
      }
    });
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) throw ShapeError("matmul: inner dims differ " + shape_str(sa) + " x " + shape_str(sb));
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch = broadcast_shape(batch_a, batch_b);
  const std::size_t ba = shape_numel(batch_a), bb = shape_numel(batch_b), bo = shape_numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(bo * m * n);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < bo; ++i) {
    detail::gemm(false, false, m, n, k, T(1), ad + (i % ba) * m * k, k, bd + (i % bb) * k * n, n, T(0),
                 out.data() + i * m * n, n);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a, b}, "matmul",
                        [a, b, m, n, k, ba, bb, bo](Node<T>& self) {
                          const T* g = self.grad.data();
                          accumulate(a, [&](std::vector<T>& ga) {
                            const T* bd = b.data().data();
                            for (std::size_t i = 0; i < bo; ++i) {
                              detail::gemm(false, true, m, k, n, T(1), g + i * m * n, n, bd + (i % bb) * k * n, n,
                                           T(1), ga.data() + (i % ba) * m * k, k);
                            }
                          });
                          accumulate(b, [&](std::vector<T>& gb) {
                            const T* ad = a.data().data();
                            for (std::size_t i = 0; i < bo; ++i) {
                              detail::gemm(true, false, k, n, m, T(1), ad + (i % ba) * m * k, k, g + i * m * n, n,
                                           T(1), gb.data() + (i % bb) * k * n, n);
                            }
                          });
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis out of range for " + shape_str(s));
  const std::size_t len = s[axis];
  const std::size_t inner = std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end(),
                                            std::size_t{1}, std::multiplies<>());
  const std::size_t outer = x.numel() / (len * inner);
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xs[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xs[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xs[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<T>(s, std::move(out), {x}, "softmax", [x, outer, len, inner](Node<T>& self) {
    accumulate(x, [&](std::vector<T>& gx) {
      const auto& y = self.data;
      const auto& g = self.grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, "reshape", [x](Node<T>& self) {
    accumulate(x, [&](std::vector<T>& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
  });
}

namespace {

// dst[out index] (+)= src[in index] where out axis i is in axis perm[i].
template <typename T>
void permute_copy(const T* src, const Shape& in_shape, const std::vector<std::size_t>& perm, T* dst,
                  bool accumulate_into) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);  // input stride for each output axis
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  const std::size_t total = shape_numel(in_shape);
  if (total == 0) return;
  if (rank == 0) {
    dst[0] = accumulate_into ? dst[0] + src[0] : src[0];
    return;
  }
  // Innermost output axis handled as a strided run.
  const std::size_t run = out_shape[rank - 1];
  const std::size_t run_stride = strides[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < total; o += run) {
    if (accumulate_into) {
      for (std::size_t j = 0; j < run; ++j) dst[o + j] += src[offset + j * run_stride];
    } else {
      for (std::size_t j = 0; j < run; ++j) dst[o + j] = src[offset + j * run_stride];
    }
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      offset += strides[ax];
      if (++idx[ax] < out_shape[ax]) break;
      offset -= strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  if (perm.size() != s.size()) throw ShapeError("permute: rank mismatch for " + shape_str(s));
  std::vector<bool> seen(perm.size(), false);
  for (auto p : perm) {
    if (p >= perm.size() || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[perm[i]];
  std::vector<T> out(x.numel());
  permute_copy(x.data().data(), s, perm, out.data(), false);
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
  Shape grad_shape = out_shape;
  return make_result<T>(std::move(out_shape), std::move(out), {x}, "permute",
                        [x, inverse, grad_shape](Node<T>& self) {
                          accumulate(x, [&](std::vector<T>& gx) {
                            permute_copy(self.grad.data(), grad_shape, inverse, gx.data(), true);
                          });
                        });
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceKind kind, const std::vector<std::size_t>& axes_in) {
  const Shape& s = x.shape();
  std::vector<bool> reduced(s.size(), axes_in.empty());
  for (auto ax : axes_in) {
    if (ax >= s.size()) throw ShapeError("reduce: axis out of range for " + shape_str(s));
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduced[i]) count *= s[i];
    else out_shape.push_back(s[i]);
  }
  // Output flat index for every input position.
  const std::size_t total = x.numel();
  std::vector<std::size_t> map(total);
  {
    std::vector<std::size_t> ostride(s.size(), 0);
    std::size_t st = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (!reduced[i]) {
        ostride[i] = st;
        st *= s[i];
      }
    }
    std::vector<std::size_t> idx(s.size(), 0);
    std::size_t off = 0;
    for (std::size_t f = 0; f < total; ++f) {
      map[f] = off;
      for (std::size_t ax = s.size(); ax-- > 0;) {
        off += ostride[ax];
        if (++idx[ax] < s[ax]) break;
        off -= ostride[ax] * s[ax];
        idx[ax] = 0;
      }
    }
  }
  const auto xs = x.data();
  std::vector<T> out(shape_numel(out_shape), T(0));
  for (std::size_t f = 0; f < total; ++f) out[map[f]] += kind == ReduceKind::rms ? xs[f] * xs[f] : xs[f];
  if (kind != ReduceKind::sum) {
    for (auto& v : out) v /= static_cast<T>(count);
  }
  if (kind == ReduceKind::rms) {
    for (auto& v : out) v = std::sqrt(v + static_cast<T>(kReduceEps));
  }
  const char* name = kind == ReduceKind::sum ? "sum" : (kind == ReduceKind::mean ? "mean" : "rms");
  return make_result<T>(std::move(out_shape), std::move(out), {x}, name,
                        [x, kind, count, map = std::move(map)](Node<T>& self) {
                          accumulate(x, [&](std::vector<T>& gx) {
                            const auto xs = x.data();
                            const auto& g = self.grad;
                            const T inv = T(1) / static_cast<T>(count);
                            for (std::size_t f = 0; f < gx.size(); ++f) {
                              const std::size_t o = map[f];
                              switch (kind) {
                                case ReduceKind::sum: gx[f] += g[o]; break;
                                case ReduceKind::mean: gx[f] += g[o] * inv; break;
                                case ReduceKind::rms: gx[f] += g[o] * xs[f] * inv / self.data[o]; break;
                              }
                            }
                          });
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  return reduce(x, ReduceKind::sum, {});
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return reduce(x, ReduceKind::mean, {});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: incompatible " + shape_str(s) + " with " + shape_str(s0));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = std::accumulate(s0.begin(), s0.begin() + static_cast<std::ptrdiff_t>(axis),
                                            std::size_t{1}, std::multiplies<>());
  const std::size_t inner = std::accumulate(s0.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s0.end(),
                                            std::size_t{1}, std::multiplies<>());
  const std::size_t out_block = out_shape[axis] * inner;
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t block = p.shape()[axis] * inner;
    const T* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, out.begin() + static_cast<std::ptrdiff_t>(o * out_block + off));
    }
    off += block;
  }
  return make_result<T>(std::move(out_shape), std::move(out), parts, "concat",
                        [parts, offsets, outer, inner, out_block, axis](Node<T>& self) {
                          for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                            accumulate(parts[pi], [&](std::vector<T>& gp) {
                              const std::size_t block = parts[pi].shape()[axis] * inner;
                              for (std::size_t o = 0; o < outer; ++o) {
                                const T* g = self.grad.data() + o * out_block + offsets[pi];
                                T* dst = gp.data() + o * block;
                                for (std::size_t j = 0; j < block; ++j) dst[j] += g[j];
                              }
                            });
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  const std::size_t outer = std::accumulate(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis),
                                            std::size_t{1}, std::multiplies<>());
  const std::size_t inner = std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end(),
                                            std::size_t{1}, std::multiplies<>());
  const std::size_t in_block = s[axis] * inner;
  const std::size_t out_block = (end - begin) * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  std::vector<T> out(outer * out_block);
  const T* src = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + o * in_block + begin * inner, src + o * in_block + begin * inner + out_block,
              out.begin() + static_cast<std::ptrdiff_t>(o * out_block));
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x}, "slice",
                        [x, outer, inner, in_block, out_block, begin](Node<T>& self) {
                          accumulate(x, [&](std::vector<T>& gx) {
                            for (std::size_t o = 0; o < outer; ++o) {
                              const T* g = self.grad.data() + o * out_block;
                              T* dst = gx.data() + o * in_block + begin * inner;
                              for (std::size_t j = 0; j < out_block; ++j) dst[j] += g[j];
                            }
                          });
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: probability must be in [0, 1)");
  if (p == 0.0 || !grad_enabled()) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? scale : T(0);
  auto mask_t = Tensor<T>::from_data(x.shape(), std::move(mask));
  return mul(x, mask_t);
}

#define APSS_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> elementwise(UnaryKind, const Tensor<T>&);                                     \
  template Tensor<T> elementwise(BinaryKind, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                              \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                              \
  template Tensor<T> atan2(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                   \
  template Tensor<T> reduce(const Tensor<T>&, ReduceKind, const std::vector<std::size_t>&);        \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> mean(const Tensor<T>&);                                                       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                           \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);               \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&);

APSS_INSTANTIATE_OPS(float)
APSS_INSTANTIATE_OPS(double)

}  // namespace apss
