#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "apss/ops.hpp"
#include "apss/tensor.hpp"

namespace apss {

/// Mono audio signal. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 8000;

  std::size_t size() const { return samples.size(); }
};

enum class WindowKind { hann, hamming, rectangular };

/// STFT geometry. Defaults are 16 ms windows with 8 ms hop at 8 kHz and a
/// 128-point DFT, giving 65 frequency bins.
struct StftConfig {
  std::size_t win_len = 128;
  std::size_t hop = 64;
  std::size_t n_fft = 128;
  WindowKind window = WindowKind::hann;
  bool center = true;

  std::size_t bins() const { return n_fft / 2 + 1; }
  // Throws ConfigError unless hop <= win_len <= n_fft and the squared
  // window overlap-adds to a strictly positive sum at this hop.
  void validate() const;
};

/// Amplitude and wrapped phase, each frames x bins, row-major.
template <typename T>
struct Spectra {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<T> amplitude;
  std::vector<T> phase;
};

// Periodic window of length cfg.win_len.
template <typename T>
std::vector<T> analysis_window(const StftConfig& cfg);

std::size_t frame_count(std::size_t num_samples, const StftConfig& cfg);

template <typename T>
Spectra<T> stft(std::span<const T> samples, const StftConfig& cfg);
Spectra<float> stft(const Waveform& wave, const StftConfig& cfg);

// Differentiable least-squares overlap-add inverse of the complex spectrum
// (real, imag), each frames x bins. Output has out_len samples.
template <typename T>
Tensor<T> istft(const Tensor<T>& real, const Tensor<T>& imag, const StftConfig& cfg, std::size_t out_len);

template <typename T>
std::vector<T> istft(const Spectra<T>& spectra, const StftConfig& cfg, std::size_t out_len);

// (amplitude * cos(phase), amplitude * sin(phase)).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> polar_to_complex(const Tensor<T>& amplitude, const Tensor<T>& phase);

template <typename T>
std::pair<std::vector<T>, std::vector<T>> polar_to_complex(const Spectra<T>& spectra);

template <typename T>
Tensor<T> arctan2(const Tensor<T>& y, const Tensor<T>& x) {
  return apss::atan2(y, x);
}

// Wraps an angle to (-pi, pi].
template <typename T>
T wrap_phase(T angle);

}  // namespace apss
