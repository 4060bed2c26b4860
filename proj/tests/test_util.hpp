#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "apss/tensor.hpp"

namespace testutil {

inline std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <typename T = double>
apss::Tensor<T> random_tensor(apss::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                              bool requires_grad = false) {
  const auto v = uniform(apss::shape_numel(shape), seed, lo, hi);
  return apss::Tensor<T>::from_data(std::move(shape), std::vector<T>(v.begin(), v.end()), requires_grad);
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename A, typename B>
double relative_l2(const A& est, const B& ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(est[i]) - static_cast<double>(ref[i]);
    num += d * d;
    den += static_cast<double>(ref[i]) * static_cast<double>(ref[i]);
  }
  return std::sqrt(num / den);
}

}  // namespace testutil
