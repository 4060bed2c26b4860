#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apss/dsp.hpp"
#include "apss/layers.hpp"

namespace apss {

/// Architecture hyperparameters. Defaults reproduce the full-size model:
/// 128 channels, 6 TF-blocks with 8 heads, 65 bins, frequency halved to 33
/// inside the network and restored by sub-pixel convolution.
struct ApssConfig {
  std::size_t channels = 128;
  std::size_t blocks = 6;
  std::size_t heads = 8;
  std::size_t freq_downsample = 2;
  std::vector<std::size_t> densenet_dilations{1, 2, 4, 8};
  std::size_t ffn_hidden = 0;  // 0 selects 2 * channels
  std::size_t norm_groups = 8;
  std::size_t ffn_kernel = 4;
  double dropout = 0.0;
  bool no_feature_combiner = false;
  bool no_pea = false;
  bool no_amp_mask = false;
  std::uint64_t seed = 0;
  StftConfig stft;

  std::size_t freq_bins() const { return stft.bins(); }
  std::size_t hidden() const { return ffn_hidden ? ffn_hidden : 2 * channels; }
  // Bins after the combiner's strided conv: F for r=1, ceil(F/2) for r=2.
  std::size_t reduced_bins() const;
  void validate() const;

  // Flat key=value form used by checkpoints and config files.
  std::map<std::string, std::string> to_key_values() const;
  // Applies recognized keys; returns keys it did not recognize.
  std::vector<std::string> apply_key_values(const std::map<std::string, std::string>& kv);
};

template <typename T>
struct SeparatedSpectra {
  Tensor<T> amp1, amp2;      // (T,F)
  Tensor<T> phase1, phase2;  // (T,F)
  Tensor<T> mask1, mask2;    // (T,F); undefined when no_amp_mask
};

template <typename T>
struct ForwardTrace {
  Tensor<T> input;  // X = stack(A, P): (2,T,F)
  Tensor<T> fused;  // E: (C,T,F')
  Tensor<T> deep;   // S: (C,T,F')
  const void* amplitude_separator_input = nullptr;
  const void* phase_separator_input = nullptr;
  SeparatedSpectra<T> spectra;
  Tensor<T> wave1, wave2;  // (L)
};

template <typename T>
Tensor<T> stack_spectra(const Spectra<T>& spectra);

// Gains (g1, g2) minimizing |mix - g1 est1 - g2 est2|^2. Falls back to one
// shared gain when the estimates are collinear and to (1, 1) when both are zero.
std::array<double, 2> mixture_gains(std::span<const float> mix, std::span<const float> est1,
                                    std::span<const float> est2);

template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const ConvSpec& spec, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

 private:
  Conv2d<T> conv_;
  InstanceNorm<T> norm_;
  PReLU<T> act_;
};

/// Dense stack along time: layer i sees the concatenation of the block
/// input and every earlier layer output, uses a (2,3) kernel with time
/// dilation d_i and past-side padding, and emits C channels. The block
/// returns the last layer's output.
template <typename T>
class DilatedDenseNet {
 public:
  DilatedDenseNet() = default;
  DilatedDenseNet(std::size_t channels, const std::vector<std::size_t>& dilations, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;
  std::size_t receptive_field() const;

 private:
  std::size_t channels_ = 0;
  std::vector<std::size_t> dilations_;
  std::vector<ConvBlock<T>> layers_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t channels, std::size_t hidden, std::size_t kernel, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

 private:
  Conv1d<T> up_;
  Conv1d<T> down_;
};

/// FFN -> MHSA -> FFN over (N,S,C) sequences, each a pre-norm residual.
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(const ApssConfig& cfg, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x, std::mt19937_64* dropout_rng = nullptr) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;
  const MultiHeadSelfAttention<T>& attention() const { return attn_; }

 private:
  RmsGroupNorm<T> norm1_, norm2_, norm3_;
  FeedForward<T> ffn1_, ffn2_;
  MultiHeadSelfAttention<T> attn_;
  double dropout_ = 0.0;
};

template <typename T>
class TfBlock {
 public:
  TfBlock() = default;
  TfBlock(const ApssConfig& cfg, std::mt19937_64& rng);
  // (C,T,F') -> (C,T,F')
  Tensor<T> operator()(const Tensor<T>& x, std::mt19937_64* dropout_rng = nullptr) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;
  const TransformerLayer<T>& frequency_transformer() const { return freq_; }

 private:
  TransformerLayer<T> freq_, time_;
};

template <typename T>
class FeatureCombiner {
 public:
  FeatureCombiner() = default;
  FeatureCombiner(const ApssConfig& cfg, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

 private:
  bool plain_ = false;
  Conv2d<T> plain_conv_;
  ConvBlock<T> block_in_, block_out_;
  DilatedDenseNet<T> dense_;
};

template <typename T>
class AmplitudeSeparator {
 public:
  AmplitudeSeparator() = default;
  AmplitudeSeparator(const ApssConfig& cfg, std::mt19937_64& rng);
  // Fills amp1/amp2 and, unless no_amp_mask, mask1/mask2.
  void operator()(const Tensor<T>& deep, const Tensor<T>& mixture_amplitude, SeparatedSpectra<T>& out) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

 private:
  bool use_mask_ = true;
  std::size_t bins_ = 0;
  DilatedDenseNet<T> dense_;
  SubpixelConv2d<T> deconv_;
  InstanceNorm<T> norm_;
  PReLU<T> act_;
  Conv2d<T> mask_conv_;
  PReLU<T> mask_act_;
};

template <typename T>
class PhaseSeparator {
 public:
  PhaseSeparator() = default;
  PhaseSeparator(const ApssConfig& cfg, std::mt19937_64& rng);
  void operator()(const Tensor<T>& deep, SeparatedSpectra<T>& out) const;
  void collect_parameters(const std::string& prefix, NamedParameters<T>& out) const;

 private:
  bool use_pea_ = true;
  std::size_t bins_ = 0;
  DilatedDenseNet<T> dense_;
  SubpixelConv2d<T> deconv_;
  InstanceNorm<T> norm_;
  PReLU<T> act_;
  Conv2d<T> real_conv_;
  Conv2d<T> imag_conv_;  // absent when no_pea
};

/// Waveform-to-waveforms two-speaker separator.
template <typename T>
class ApssModel {
 public:
  explicit ApssModel(ApssConfig cfg);

  const ApssConfig& config() const { return cfg_; }

  // Full differentiable pass. Requires at least win_len samples.
  ForwardTrace<T> forward(std::span<const T> mixture) const;
  // Inference pass. Estimates are rescaled by mixture_gains, which leaves
  // their SI-SNR unchanged and fixes the scale and sign the loss ignores.
  std::pair<Waveform, Waveform> separate(const Waveform& mixture) const;

  Tensor<T> feature_combine(const Tensor<T>& x) const { return combiner_(x); }
  Tensor<T> deep_process(const Tensor<T>& e) const;
  const std::vector<TfBlock<T>>& blocks() const { return blocks_; }

  NamedParameters<T> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Enables dropout sampling (when cfg.dropout > 0).
  void set_training(bool on) { training_ = on; }

 private:
  ApssConfig cfg_;
  FeatureCombiner<T> combiner_;
  std::vector<TfBlock<T>> blocks_;
  AmplitudeSeparator<T> amp_sep_;
  PhaseSeparator<T> phase_sep_;
  bool training_ = false;
  mutable std::mt19937_64 dropout_rng_;
};

extern template class ApssModel<float>;
extern template class ApssModel<double>;

}  // namespace apss
