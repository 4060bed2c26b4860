#include <cmath>
#include <random>

#include "apss/data_io.hpp"
#include "apss/dsp.hpp"
#include "apss/gradcheck.hpp"
#include "apss/layers.hpp"
#include "apss/model.hpp"
#include "apss/objective.hpp"
#include "apss/ops.hpp"

namespace apss {

namespace {

using TD = Tensor<double>;

class Suite {
 public:
  Suite(const GradSuiteOptions& options, const std::function<void(const GradCheckReport&)>& on_report)
      : options_(options), on_report_(on_report), rng_(options.seed) {}

  TD random(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng_);
    return TD::from_data(std::move(shape), std::move(v));
  }

  // Values with |x| in [lo, hi] and random sign, kept away from kinks at zero.
  TD away_from_zero(Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sign(rng_) ? u(rng_) : -u(rng_);
    return TD::from_data(std::move(shape), std::move(v));
  }

  // Scalar readout sum(y * r) with a fixed random r per call site.
  std::function<TD(const TD&)> projector() {
    auto r = std::make_shared<TD>();
    auto seed = rng_();
    return [r, seed](const TD& y) {
      if (!r->defined() || r->shape() != y.shape()) {
        std::mt19937_64 g(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> v(y.numel());
        for (auto& x : v) x = u(g);
        *r = TD::from_data(y.shape(), std::move(v));
      }
      return sum(mul(y, *r));
    };
  }

  void check(const std::string& name, const ScalarFn& f, std::vector<TD> inputs, double tol,
             std::size_t quick_entries = 16, GradCheckOptions opts = {}) {
    opts.seed = rng_();
    if (!options_.exhaustive) opts.max_entries = quick_entries;
    auto report = grad_check(name, f, std::move(inputs), tol, opts);
    if (on_report_) on_report_(report);
    reports_.push_back(std::move(report));
  }

  std::vector<GradCheckReport> take() { return std::move(reports_); }
  std::mt19937_64& rng() { return rng_; }

 private:
  GradSuiteOptions options_;
  std::function<void(const GradCheckReport&)> on_report_;
  std::mt19937_64 rng_;
  std::vector<GradCheckReport> reports_;
};

void layer_checks(Suite& s) {
  const double tol = kLayerGradTolerance;
  {
    Conv2dGeometry geo;
    geo.stride_f = 2;
    geo.dilation_t = 2;
    geo.pad_top = 2;
    geo.pad_left = 1;
    geo.pad_right = 1;
    auto proj = s.projector();
    s.check("conv2d", [=](const std::vector<TD>& in) { return proj(conv2d(in[0], in[1], in[2], geo)); },
            {s.random({3, 6, 7}), s.random({4, 3, 2, 3}), s.random({4})}, tol);
  }
  {
    auto proj = s.projector();
    const auto offsets = conv1d_offsets(4);
    s.check("conv1d", [=](const std::vector<TD>& in) { return proj(conv1d_taps(in[0], in[1], in[2], offsets)); },
            {s.random({2, 7, 3}), s.random({4, 3, 5}), s.random({5})}, tol);
  }
  {
    auto proj = s.projector();
    const auto offsets = conv1d_transposed_offsets(4);
    s.check("conv1d_transposed",
            [=](const std::vector<TD>& in) { return proj(conv1d_taps(in[0], in[1], in[2], offsets)); },
            {s.random({2, 7, 5}), s.random({4, 5, 3}), s.random({3})}, tol);
  }
  {
    auto proj = s.projector();
    Conv2dGeometry geo;
    geo.pad_left = 1;
    geo.pad_right = 1;
    s.check("subpixel_conv2d",
            [=](const std::vector<TD>& in) { return proj(pixel_shuffle_freq(conv2d(in[0], in[1], in[2], geo), 2)); },
            {s.random({3, 4, 5}), s.random({4, 3, 1, 3}), s.random({4})}, tol);
  }
  {
    auto proj = s.projector();
    s.check("instance_norm", [=](const std::vector<TD>& in) { return proj(instance_norm(in[0], in[1], in[2])); },
            {s.random({3, 4, 5}), s.random({3}, 0.5, 1.5), s.random({3})}, tol);
  }
  {
    auto proj = s.projector();
    s.check("prelu", [=](const std::vector<TD>& in) { return proj(prelu(in[0], in[1])); },
            {s.away_from_zero({3, 4, 5}, 0.05, 1.0), s.random({3}, 0.1, 0.4)}, tol);
  }
  {
    auto proj = s.projector();
    s.check("swiglu", [=](const std::vector<TD>& in) { return proj(swiglu(in[0])); }, {s.random({3, 4, 8}, -2.0, 2.0)},
            tol);
  }
  {
    auto proj = s.projector();
    s.check("rms_group_norm", [=](const std::vector<TD>& in) { return proj(rms_group_norm(in[0], in[1], 4)); },
            {s.random({2, 5, 8}), s.random({8}, 0.5, 1.5)}, tol);
  }
  {
    auto proj = s.projector();
    auto attn = std::make_shared<MultiHeadSelfAttention<double>>(8, 2, s.rng());
    s.check(
        "mhsa",
        [=](const std::vector<TD>& in) {
          attn->w_qkv = in[1];
          attn->b_qkv = in[2];
          attn->w_out = in[3];
          attn->b_out = in[4];
          return proj((*attn)(in[0]));
        },
        {s.random({2, 5, 8}), attn->w_qkv.detach(), s.random(attn->b_qkv.shape(), -0.1, 0.1), attn->w_out.detach(),
         s.random(attn->b_out.shape(), -0.1, 0.1)},
        tol);
  }
}

void spectral_checks(Suite& s) {
  const double tol = kLayerGradTolerance;
  {
    auto proj = s.projector();
    s.check("arctan2", [=](const std::vector<TD>& in) { return proj(arctan2(in[0], in[1])); },
            {s.away_from_zero({4, 5}, 0.2, 1.0), s.away_from_zero({4, 5}, 0.2, 1.0)}, tol);
  }
  {
    auto p1 = s.projector();
    auto p2 = s.projector();
    s.check(
        "polar_to_complex",
        [=](const std::vector<TD>& in) {
          auto [re, im] = polar_to_complex(in[0], in[1]);
          return add(p1(re), p2(im));
        },
        {s.random({4, 5}, 0.1, 1.0), s.random({4, 5}, -3.0, 3.0)}, tol);
  }
  {
    StftConfig cfg;
    cfg.win_len = 16;
    cfg.hop = 8;
    cfg.n_fft = 16;
    const std::size_t len = 64;
    const std::size_t frames = frame_count(len, cfg);
    auto proj = s.projector();
    s.check("istft", [=](const std::vector<TD>& in) { return proj(istft(in[0], in[1], cfg, len)); },
            {s.random({frames, cfg.bins()}), s.random({frames, cfg.bins()})}, tol);
  }
  s.check("si_snr", [](const std::vector<TD>& in) { return si_snr(in[0], in[1]); },
          {s.random({32}), s.random({32})}, tol);
  {
    auto ref1 = s.random({32});
    auto ref2 = s.random({32});
    auto est1 = add(mul_scalar(ref2, 0.8), mul_scalar(s.random({32}), 0.3)).detach();
    auto est2 = add(mul_scalar(ref1, 0.8), mul_scalar(s.random({32}), 0.3)).detach();
    s.check("pit_loss", [](const std::vector<TD>& in) { return pit_loss(in[0], in[1], in[2], in[3]).loss; },
            {est1, est2, ref1, ref2}, tol);
  }
}

void model_check(Suite& s) {
  ApssConfig cfg;
  cfg.channels = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  cfg.norm_groups = 2;
  cfg.stft.win_len = 16;
  cfg.stft.hop = 8;
  cfg.stft.n_fft = 16;
  cfg.seed = s.rng()();
  auto model = std::make_shared<ApssModel<double>>(cfg);
  const std::size_t len = 256;
  const auto pair = gen_toy_pair(s.rng()());
  const auto mix = mix_at_snr(pair.source1, pair.source2, {2.0, 0});
  auto to_tensor = [&](const Waveform& w) {
    return TD::from_data({len}, std::vector<double>(w.samples.begin(), w.samples.begin() + len));
  };
  auto mixture = std::make_shared<std::vector<double>>(mix.mix.samples.begin(), mix.mix.samples.begin() + len);
  auto ref1 = to_tensor(mix.source1);
  auto ref2 = to_tensor(mix.source2);
  auto pattern = std::make_shared<std::vector<std::uint8_t>>();
  GradCheckOptions opts;
  opts.region = [pattern] { return *pattern; };
  s.check(
      "end_to_end_model",
      [=](const std::vector<TD>&) {
        pattern->clear();
        set_activation_pattern_sink(pattern.get());
        auto trace = model->forward(std::span<const double>(*mixture));
        set_activation_pattern_sink(nullptr);
        return pit_loss(trace.wave1, trace.wave2, ref1, ref2).loss;
      },
      model->parameters(), kModelGradTolerance, 4, opts);
}

}  // namespace

std::vector<GradCheckReport> run_gradient_suite(const GradSuiteOptions& options,
                                                const std::function<void(const GradCheckReport&)>& on_report) {
  Suite s(options, on_report);
  layer_checks(s);
  spectral_checks(s);
  model_check(s);
  return s.take();
}

}  // namespace apss
