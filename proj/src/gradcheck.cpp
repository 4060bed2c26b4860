#include "apss/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace apss {

GradCheckReport grad_check(const std::string& name, const ScalarFn& f, std::vector<Tensor<double>> inputs,
                           double tol, const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;
  report.tolerance = tol;

  for (auto& x : inputs) {
    x.zero_grad();
    x.set_requires_grad(true);
  }
  f(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) {
    if (x.has_grad()) analytic.emplace_back(x.grad().begin(), x.grad().end());
    else analytic.emplace_back(x.numel(), 0.0);
  }

  const auto base_region = options.region ? options.region() : std::vector<std::uint8_t>{};
  auto same_region = [&] { return !options.region || options.region() == base_region; };

  struct Entry {
    std::size_t input, index;
    double numeric;
  };
  std::vector<Entry> entries;
  std::mt19937_64 rng(options.seed);
  NoGradGuard guard;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    auto& x = inputs[which];
    std::vector<std::size_t> indices(x.numel());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries > 0 && indices.size() > options.max_entries) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_entries);
      std::sort(indices.begin(), indices.end());
    }
    auto values = x.mutable_data();
    for (const std::size_t i : indices) {
      const double original = values[i];
      double h = options.step * std::max(1.0, std::abs(original));
      bool smooth = false;
      double numeric = 0.0;
      for (std::size_t attempt = 0; attempt <= options.max_refinements && !smooth; ++attempt, h /= 4.0) {
        values[i] = original + h;
        const double up = f(inputs).item();
        const bool up_ok = same_region();
        values[i] = original - h;
        const double down = f(inputs).item();
        const bool down_ok = same_region();
        numeric = (up - down) / (2.0 * h);
        smooth = up_ok && down_ok;
        if (smooth && attempt > 0) ++report.entries_refined;
      }
      values[i] = original;
      ++report.entries_checked;
      if (!smooth) {
        ++report.entries_nonsmooth;
        continue;
      }
      entries.push_back({which, i, numeric});
    }
  }
  double scale = 0.0;
  for (const auto& e : entries) scale = std::max(scale, std::abs(e.numeric));
  const double floor = std::max(options.floor_fraction * scale, options.abs_floor);
  for (const auto& e : entries) {
    const double a = analytic[e.input][e.index];
    const double abs_err = std::abs(a - e.numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(e.numeric), floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_input = e.input;
      report.worst_index = e.index;
    }
  }
  report.passed = report.entries_checked > 0 && report.entries_nonsmooth == 0 && report.max_rel_error <= tol;
  return report;
}

GradCheckReport grad_check(const std::string& name, const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double tol, const GradCheckOptions& options) {
  return grad_check(
      name, [&f](const std::vector<Tensor<double>>& in) { return f(in[0]); }, {std::move(x)}, tol, options);
}

}  // namespace apss
