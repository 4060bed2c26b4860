#pragma once

#include <array>
#include <span>

#include "apss/ops.hpp"
#include "apss/tensor.hpp"

namespace apss {

// Added to every energy term; caps a perfect estimate at roughly
// 10*log10(energy / 1e-8) dB instead of +inf.
inline constexpr double kSiSnrEps = 1e-8;

enum class Permutation { identity, swap };

// SI-SNR in dB of est against ref with projection e = (<est,ref>/(|ref|^2+eps)) ref.
// No mean removal. Differentiable in est (and ref, if it tracks gradients).
template <typename T>
Tensor<T> si_snr(const Tensor<T>& est, const Tensor<T>& ref);

double si_snr(std::span<const float> est, std::span<const float> ref);
double si_snr(std::span<const double> est, std::span<const double> ref);

// -(si_snr(est1, ref1) + si_snr(est2, ref2)).
template <typename T>
Tensor<T> pair_loss(const Tensor<T>& est1, const Tensor<T>& est2, const Tensor<T>& ref1, const Tensor<T>& ref2);

// The single-logarithm form -20 log10(|e1||e2| / (|est1-e1||est2-e2|)) with
// the same eps placement, evaluated directly in double precision.
double pair_loss_product_form(std::span<const double> est1, std::span<const double> est2,
                              std::span<const double> ref1, std::span<const double> ref2);

template <typename T>
struct PitResult {
  Tensor<T> loss;  // scalar, differentiable through the chosen assignment
  Permutation permutation = Permutation::identity;
  // SI-SNR of reference 1 and reference 2 under the chosen assignment.
  std::array<double, 2> per_source_si_snr{};
};

// Two-speaker permutation invariant loss. Ties go to identity.
template <typename T>
PitResult<T> pit_loss(const Tensor<T>& est1, const Tensor<T>& est2, const Tensor<T>& ref1, const Tensor<T>& ref2);

}  // namespace apss
