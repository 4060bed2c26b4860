#include "apss/objective.hpp"

#include <cmath>
#include <numbers>

namespace apss {

namespace {

void check_pair(const Shape& est, const Shape& ref) {
  if (est != ref || est.size() != 1) {
    throw ShapeError("si_snr: estimate " + shape_str(est) + " and reference " + shape_str(ref) +
                     " must be equal-length 1-D signals");
  }
}

template <typename T>
void check_reference(std::span<const T> ref) {
  for (auto v : ref) {
    if (v != T(0)) return;
  }
  throw DataError("si_snr: reference signal is identically zero");
}

template <typename T>
double si_snr_plain(std::span<const T> est, std::span<const T> ref) {
  if (est.size() != ref.size() || est.empty()) throw ShapeError("si_snr: length mismatch or empty signal");
  check_reference(ref);
  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    dot += static_cast<double>(est[i]) * ref[i];
    rr += static_cast<double>(ref[i]) * ref[i];
  }
  const double alpha = dot / (rr + kSiSnrEps);
  double ee = 0.0, res = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = alpha * ref[i];
    const double r = est[i] - e;
    ee += e * e;
    res += r * r;
  }
  return 10.0 * std::log10((ee + kSiSnrEps) / (res + kSiSnrEps));
}

}  // namespace

template <typename T>
Tensor<T> si_snr(const Tensor<T>& est, const Tensor<T>& ref) {
  check_pair(est.shape(), ref.shape());
  check_reference(ref.data());
  const T eps = static_cast<T>(kSiSnrEps);
  auto ref_energy = add_scalar(sum(mul(ref, ref)), eps);
  auto alpha = div(sum(mul(est, ref)), ref_energy);
  auto target = mul(ref, alpha);
  auto residual = sub(est, target);
  auto ratio = div(add_scalar(sum(mul(target, target)), eps), add_scalar(sum(mul(residual, residual)), eps));
  return mul_scalar(log(ratio), static_cast<T>(10.0 / std::numbers::ln10));
}

double si_snr(std::span<const float> est, std::span<const float> ref) { return si_snr_plain(est, ref); }
double si_snr(std::span<const double> est, std::span<const double> ref) { return si_snr_plain(est, ref); }

template <typename T>
Tensor<T> pair_loss(const Tensor<T>& est1, const Tensor<T>& est2, const Tensor<T>& ref1, const Tensor<T>& ref2) {
  return neg(add(si_snr(est1, ref1), si_snr(est2, ref2)));
}

double pair_loss_product_form(std::span<const double> est1, std::span<const double> est2,
                              std::span<const double> ref1, std::span<const double> ref2) {
  auto norms = [](std::span<const double> est, std::span<const double> ref) {
    if (est.size() != ref.size() || est.empty()) throw ShapeError("pair_loss: length mismatch or empty signal");
    check_reference(ref);
    double dot = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
      dot += est[i] * ref[i];
      rr += ref[i] * ref[i];
    }
    const double alpha = dot / (rr + kSiSnrEps);
    double ee = 0.0, res = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
      ee += alpha * ref[i] * alpha * ref[i];
      res += (est[i] - alpha * ref[i]) * (est[i] - alpha * ref[i]);
    }
    return std::pair{std::sqrt(ee + kSiSnrEps), std::sqrt(res + kSiSnrEps)};
  };
  const auto [e1, r1] = norms(est1, ref1);
  const auto [e2, r2] = norms(est2, ref2);
  return -20.0 * std::log10((e1 * e2) / (r1 * r2));
}

template <typename T>
PitResult<T> pit_loss(const Tensor<T>& est1, const Tensor<T>& est2, const Tensor<T>& ref1, const Tensor<T>& ref2) {
  auto s11 = si_snr(est1, ref1);
  auto s22 = si_snr(est2, ref2);
  auto s12 = si_snr(est1, ref2);
  auto s21 = si_snr(est2, ref1);
  const double identity = -(static_cast<double>(s11.item()) + static_cast<double>(s22.item()));
  const double swapped = -(static_cast<double>(s21.item()) + static_cast<double>(s12.item()));
  PitResult<T> result;
  if (swapped < identity) {
    result.permutation = Permutation::swap;
    result.loss = neg(add(s21, s12));
    result.per_source_si_snr = {static_cast<double>(s21.item()), static_cast<double>(s12.item())};
  } else {
    result.permutation = Permutation::identity;
    result.loss = neg(add(s11, s22));
    result.per_source_si_snr = {static_cast<double>(s11.item()), static_cast<double>(s22.item())};
  }
  return result;
}

template Tensor<float> si_snr(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> si_snr(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> pair_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> pair_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&);
template PitResult<float> pit_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                   const Tensor<float>&);
template PitResult<double> pit_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                    const Tensor<double>&);

}  // namespace apss
