#include "apss/dsp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "blas.hpp"

namespace apss {

using detail::make_result;
using detail::Node;

namespace {

std::vector<double> window_values(std::size_t n, WindowKind kind) {
  std::vector<double> w(n, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::cos(two_pi * static_cast<double>(i) / static_cast<double>(n));
    switch (kind) {
      case WindowKind::hann: w[i] = 0.5 - 0.5 * c; break;
      case WindowKind::hamming: w[i] = 0.54 - 0.46 * c; break;
      case WindowKind::rectangular: w[i] = 1.0; break;
    }
  }
  return w;
}

// Index into a signal of length n mirrored about its end samples, repeating
// as needed so arbitrarily short signals can be padded.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n - 1);
  std::ptrdiff_t k = i % period;
  if (k < 0) k += period;
  if (k >= static_cast<std::ptrdiff_t>(n)) k = period - k;
  return static_cast<std::size_t>(k);
}

std::size_t pad_of(const StftConfig& cfg) { return cfg.center ? cfg.win_len / 2 : 0; }

// DFT basis restricted to the first win_len time samples: rows are bins.
// Forward:  re = frame . cos,  im = -frame . sin.
// Inverse:  frame = re . inv_cos + im . inv_sin (real inverse DFT).
template <typename T>
struct DftBasis {
  std::vector<T> cos_fwd;  // win x bins
  std::vector<T> sin_fwd;  // win x bins (negated)
  std::vector<T> inv_re;   // bins x win
  std::vector<T> inv_im;   // bins x win
};

template <typename T>
DftBasis<T> make_basis(const StftConfig& cfg) {
  const std::size_t n = cfg.n_fft, bins = cfg.bins(), win = cfg.win_len;
  DftBasis<T> b;
  b.cos_fwd.resize(win * bins);
  b.sin_fwd.resize(win * bins);
  b.inv_re.resize(bins * win);
  b.inv_im.resize(bins * win);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t k = 0; k < bins; ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    const double weight = (edge ? 1.0 : 2.0) / static_cast<double>(n);
    for (std::size_t t = 0; t < win; ++t) {
      const double angle = two_pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      const double c = std::cos(angle), s = std::sin(angle);
      b.cos_fwd[t * bins + k] = static_cast<T>(c);
      b.sin_fwd[t * bins + k] = static_cast<T>(-s);
      b.inv_re[k * win + t] = static_cast<T>(weight * c);
      b.inv_im[k * win + t] = static_cast<T>(-weight * s);
    }
  }
  return b;
}

// Squared-window overlap-add sum over the padded timeline.
template <typename T>
std::vector<T> overlap_weights(const std::vector<T>& w, std::size_t frames, std::size_t hop) {
  std::vector<T> sum((frames - 1) * hop + w.size(), T(0));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < w.size(); ++n) sum[t * hop + n] += w[n] * w[n];
  }
  return sum;
}

}  // namespace

void StftConfig::validate() const {
  if (hop == 0 || win_len == 0 || n_fft == 0) throw ConfigError("stft: hop, win_len and n_fft must be positive");
  if (hop > win_len) {
    throw ConfigError("stft: hop (" + std::to_string(hop) + ") exceeds win_len (" + std::to_string(win_len) + ")");
  }
  if (win_len > n_fft) {
    throw ConfigError("stft: win_len (" + std::to_string(win_len) + ") exceeds n_fft (" + std::to_string(n_fft) + ")");
  }
  const auto w = window_values(win_len, window);
  for (std::size_t phase = 0; phase < hop; ++phase) {
    double s = 0.0;
    for (std::size_t n = phase; n < win_len; n += hop) s += w[n] * w[n];
    if (s <= 0.0) {
      throw ConfigError("stft: window has zero overlap-add sum at hop " + std::to_string(hop));
    }
  }
}

template <typename T>
std::vector<T> analysis_window(const StftConfig& cfg) {
  const auto w = window_values(cfg.win_len, cfg.window);
  return std::vector<T>(w.begin(), w.end());
}

std::size_t frame_count(std::size_t num_samples, const StftConfig& cfg) {
  if (cfg.center) return num_samples / cfg.hop + 1;
  if (num_samples < cfg.win_len) return 0;
  return (num_samples - cfg.win_len) / cfg.hop + 1;
}

template <typename T>
T wrap_phase(T angle) {
  constexpr T pi = std::numbers::pi_v<T>;
  constexpr T two_pi = 2 * std::numbers::pi_v<T>;
  T a = std::fmod(angle + pi, two_pi);
  if (a < 0) a += two_pi;
  a -= pi;
  if (a <= -pi) a = pi;
  return a;
}

template <typename T>
Spectra<T> stft(std::span<const T> samples, const StftConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw DataError("stft: empty signal");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) throw DataError("stft: non-finite sample at index " + std::to_string(i));
  }
  const std::size_t frames = frame_count(samples.size(), cfg);
  if (frames == 0) throw DataError("stft: signal shorter than one window");
  const std::size_t win = cfg.win_len, bins = cfg.bins(), hop = cfg.hop;
  const auto pad = static_cast<std::ptrdiff_t>(pad_of(cfg));
  const auto w = analysis_window<T>(cfg);

  std::vector<T> framed(frames * win);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < win; ++n) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * hop + n) - pad;
      framed[t * win + n] = w[n] * samples[reflect_index(src, samples.size())];
    }
  }
  const auto basis = make_basis<T>(cfg);
  std::vector<T> re(frames * bins), im(frames * bins);
  detail::gemm(false, false, frames, bins, win, T(1), framed.data(), win, basis.cos_fwd.data(), bins, T(0),
               re.data(), bins);
  detail::gemm(false, false, frames, bins, win, T(1), framed.data(), win, basis.sin_fwd.data(), bins, T(0),
               im.data(), bins);

  Spectra<T> out;
  out.frames = frames;
  out.bins = bins;
  out.amplitude.resize(frames * bins);
  out.phase.resize(frames * bins);
  constexpr T pi = std::numbers::pi_v<T>;
  for (std::size_t i = 0; i < re.size(); ++i) {
    out.amplitude[i] = std::hypot(re[i], im[i]);
    T p = (re[i] == T(0) && im[i] == T(0)) ? T(0) : std::atan2(im[i], re[i]);
    if (p <= -pi) p = pi;
    out.phase[i] = p;
  }
  return out;
}

Spectra<float> stft(const Waveform& wave, const StftConfig& cfg) {
  if (wave.sample_rate <= 0) throw DataError("stft: sample rate must be positive");
  return stft<float>(std::span<const float>(wave.samples), cfg);
}

template <typename T>
Tensor<T> istft(const Tensor<T>& real, const Tensor<T>& imag, const StftConfig& cfg, std::size_t out_len) {
  cfg.validate();
  const std::size_t bins = cfg.bins(), win = cfg.win_len, hop = cfg.hop;
  if (real.rank() != 2 || real.shape() != imag.shape() || real.dim(1) != bins) {
    throw ShapeError("istft: expected matching (frames, " + std::to_string(bins) + ") inputs, got " +
                     shape_str(real.shape()) + " and " + shape_str(imag.shape()));
  }
  const std::size_t frames = real.dim(0);
  if (frames == 0) throw ShapeError("istft: no frames");
  if (out_len > frames * hop) {
    throw ShapeError("istft: out_len " + std::to_string(out_len) + " exceeds frames*hop = " +
                     std::to_string(frames * hop));
  }
  const std::size_t pad = pad_of(cfg);
  const auto w = analysis_window<T>(cfg);
  auto wsum = overlap_weights(w, frames, hop);
  if (pad + out_len > wsum.size()) {
    throw ConfigError("istft: output extends past the last frame");
  }
  // Normalizer for retained samples only.
  std::vector<T> inv_norm(out_len);
  for (std::size_t j = 0; j < out_len; ++j) {
    const T d = wsum[j + pad];
    if (!(d > T(1e-12))) {
      throw ConfigError("istft: zero overlap-add denominator at sample " + std::to_string(j));
    }
    inv_norm[j] = T(1) / d;
  }
  auto basis = std::make_shared<DftBasis<T>>(make_basis<T>(cfg));

  std::vector<T> framed(frames * win);
  detail::gemm(false, false, frames, win, bins, T(1), real.data().data(), bins, basis->inv_re.data(), win, T(0),
               framed.data(), win);
  detail::gemm(false, false, frames, win, bins, T(1), imag.data().data(), bins, basis->inv_im.data(), win, T(1),
               framed.data(), win);
  std::vector<T> out(out_len, T(0));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < win; ++n) {
      const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(t * hop + n) - static_cast<std::ptrdiff_t>(pad);
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(out_len)) continue;
      out[static_cast<std::size_t>(j)] += w[n] * framed[t * win + n];
    }
  }
  for (std::size_t j = 0; j < out_len; ++j) out[j] *= inv_norm[j];

  return make_result<T>(
      {out_len}, std::move(out), {real, imag}, "istft",
      [real, imag, basis, w, inv_norm, frames, win, bins, hop, pad, out_len](Node<T>& self) {
        // Adjoint: window-weighted framing of the normalized upstream gradient.
        std::vector<T> gframed(frames * win, T(0));
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t n = 0; n < win; ++n) {
            const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(t * hop + n) - static_cast<std::ptrdiff_t>(pad);
            if (j < 0 || j >= static_cast<std::ptrdiff_t>(out_len)) continue;
            const auto ju = static_cast<std::size_t>(j);
            gframed[t * win + n] = w[n] * self.grad[ju] * inv_norm[ju];
          }
        }
        if (real.requires_grad()) {
          auto& g = real.node()->ensure_grad();
          detail::gemm(false, true, frames, bins, win, T(1), gframed.data(), win, basis->inv_re.data(), win, T(1),
                       g.data(), bins);
        }
        if (imag.requires_grad()) {
          auto& g = imag.node()->ensure_grad();
          detail::gemm(false, true, frames, bins, win, T(1), gframed.data(), win, basis->inv_im.data(), win, T(1),
                       g.data(), bins);
        }
      });
}

template <typename T>
std::vector<T> istft(const Spectra<T>& spectra, const StftConfig& cfg, std::size_t out_len) {
  if (spectra.amplitude.size() != spectra.frames * spectra.bins || spectra.phase.size() != spectra.amplitude.size()) {
    throw ShapeError("istft: spectra buffers do not match frames x bins");
  }
  NoGradGuard guard;
  auto [re, im] = polar_to_complex(spectra);
  auto real = Tensor<T>::from_data({spectra.frames, spectra.bins}, std::move(re));
  auto imag = Tensor<T>::from_data({spectra.frames, spectra.bins}, std::move(im));
  auto out = istft(real, imag, cfg, out_len);
  return std::vector<T>(out.data().begin(), out.data().end());
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> polar_to_complex(const Tensor<T>& amplitude, const Tensor<T>& phase) {
  if (amplitude.shape() != phase.shape()) {
    throw ShapeError("polar_to_complex: shape mismatch " + shape_str(amplitude.shape()) + " vs " +
                     shape_str(phase.shape()));
  }
  return {mul(amplitude, cos(phase)), mul(amplitude, sin(phase))};
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> polar_to_complex(const Spectra<T>& spectra) {
  if (spectra.phase.size() != spectra.amplitude.size()) throw ShapeError("polar_to_complex: shape mismatch");
  std::vector<T> re(spectra.amplitude.size()), im(spectra.amplitude.size());
  for (std::size_t i = 0; i < re.size(); ++i) {
    re[i] = spectra.amplitude[i] * std::cos(spectra.phase[i]);
    im[i] = spectra.amplitude[i] * std::sin(spectra.phase[i]);
  }
  return {std::move(re), std::move(im)};
}

#define APSS_INSTANTIATE_DSP(T)                                                                             \
  template std::vector<T> analysis_window<T>(const StftConfig&);                                            \
  template T wrap_phase<T>(T);                                                                              \
  template Spectra<T> stft<T>(std::span<const T>, const StftConfig&);                                       \
  template Tensor<T> istft<T>(const Tensor<T>&, const Tensor<T>&, const StftConfig&, std::size_t);          \
  template std::vector<T> istft<T>(const Spectra<T>&, const StftConfig&, std::size_t);                      \
  template std::pair<Tensor<T>, Tensor<T>> polar_to_complex<T>(const Tensor<T>&, const Tensor<T>&);         \
  template std::pair<std::vector<T>, std::vector<T>> polar_to_complex<T>(const Spectra<T>&);

APSS_INSTANTIATE_DSP(float)
APSS_INSTANTIATE_DSP(double)

}  // namespace apss
