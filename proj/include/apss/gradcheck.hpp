#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apss/tensor.hpp"

namespace apss {

struct GradCheckOptions {
  double step = 1e-5;             // scaled by max(1, |x|)
  std::size_t max_entries = 0;    // per input; 0 = check every entry
  std::uint64_t seed = 0;         // selects entries when max_entries limits them
  double floor_fraction = 1e-2;   // denominator floor, fraction of max |numeric grad| over all inputs
  double abs_floor = 1e-4;        // absolute denominator floor, for gradients that are identically zero
  // Optional signature of the piecewise-smooth region of the last evaluation
  // (e.g. activation signs). When x+h or x-h lands in a different region
  // than x, the step is divided by 4 up to max_refinements times.
  std::function<std::vector<std::uint8_t>()> region;
  std::size_t max_refinements = 10;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double tolerance = 0.0;
  std::size_t entries_refined = 0;    // needed a smaller step to stay in one region
  std::size_t entries_nonsmooth = 0;  // no step kept both sides in one region
  bool passed = false;
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of a scalar function against central
// differences. Relative error per entry is |a - n| / max(|a|, |n|, floor)
// with floor = max(abs_floor, floor_fraction * max|n| over every checked entry). A check
// with non-smooth entries fails. Never throws on a mismatch; the report
// carries the verdict.
GradCheckReport grad_check(const std::string& name, const ScalarFn& f, std::vector<Tensor<double>> inputs,
                           double tol, const GradCheckOptions& options = {});

GradCheckReport grad_check(const std::string& name, const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double tol, const GradCheckOptions& options = {});

inline constexpr double kLayerGradTolerance = 1e-6;
inline constexpr double kModelGradTolerance = 1e-4;

struct GradSuiteOptions {
  bool exhaustive = true;  // false samples a few entries per input
  std::uint64_t seed = 1;
};

// Every layer primitive, the spectral ops, the losses, and an end-to-end toy
// model (C=8, B=1, L=256, n_fft=16) in double precision.
std::vector<GradCheckReport> run_gradient_suite(const GradSuiteOptions& options = {},
                                                const std::function<void(const GradCheckReport&)>& on_report = {});

}  // namespace apss
