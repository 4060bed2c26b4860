#include "apss/model.hpp"

#include <cmath>
#include <sstream>

#include "key_value.hpp"

namespace apss {

namespace {

using detail::format_double;
using detail::parse_bool;
using detail::parse_double;
using detail::parse_size;

std::string window_name(WindowKind w) {
  switch (w) {
    case WindowKind::hann: return "hann";
    case WindowKind::hamming: return "hamming";
    case WindowKind::rectangular: return "rectangular";
  }
  return "hann";
}

ConvSpec conv_spec(std::size_t in, std::size_t out, std::size_t kt, std::size_t kf, std::size_t stride_f) {
  ConvSpec s;
  s.in_ch = in;
  s.out_ch = out;
  s.kernel_t = kt;
  s.kernel_f = kf;
  s.geometry.stride_f = stride_f;
  s.geometry.pad_left = kf / 2;
  s.geometry.pad_right = kf / 2;
  return s;
}

// (2,T,F) channel pair -> two (T,F) tensors.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_pair(const Tensor<T>& x) {
  const std::size_t t = x.dim(1), f = x.dim(2);
  return {reshape(slice(x, 0, 0, 1), {t, f}), reshape(slice(x, 0, 1, 2), {t, f})};
}

}  // namespace

std::size_t ApssConfig::reduced_bins() const {
  return conv_output_length(freq_bins(), 3, freq_downsample, 1, 2);
}

void ApssConfig::validate() const {
  stft.validate();
  if (channels == 0 || heads == 0 || channels % heads != 0) {
    throw ConfigError("model: channels (" + std::to_string(channels) + ") must be a positive multiple of heads (" +
                      std::to_string(heads) + ")");
  }
  if (norm_groups == 0 || channels % norm_groups != 0) {
    throw ConfigError("model: channels (" + std::to_string(channels) + ") must be divisible by norm_groups (" +
                      std::to_string(norm_groups) + ")");
  }
  if (freq_downsample != 1 && freq_downsample != 2) throw ConfigError("model: freq_downsample must be 1 or 2");
  if (densenet_dilations.empty()) throw ConfigError("model: densenet needs at least one layer");
  for (auto d : densenet_dilations) {
    if (d == 0) throw ConfigError("model: densenet dilations must be positive");
  }
  if (ffn_kernel == 0) throw ConfigError("model: ffn_kernel must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
  if (reduced_bins() * freq_downsample < freq_bins()) {
    throw ConfigError("model: sub-pixel upsampling cannot restore " + std::to_string(freq_bins()) + " bins");
  }
}

std::map<std::string, std::string> ApssConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  kv["channels"] = std::to_string(channels);
  kv["blocks"] = std::to_string(blocks);
  kv["heads"] = std::to_string(heads);
  kv["freq-downsample"] = std::to_string(freq_downsample);
  std::string dil;
  for (std::size_t i = 0; i < densenet_dilations.size(); ++i) {
    if (i) dil += ',';
    dil += std::to_string(densenet_dilations[i]);
  }
  kv["densenet-dilations"] = dil;
  kv["ffn-hidden"] = std::to_string(ffn_hidden);
  kv["norm-groups"] = std::to_string(norm_groups);
  kv["ffn-kernel"] = std::to_string(ffn_kernel);
  kv["dropout"] = format_double(dropout);
  kv["no-fc"] = no_feature_combiner ? "true" : "false";
  kv["no-pea"] = no_pea ? "true" : "false";
  kv["no-am"] = no_amp_mask ? "true" : "false";
  kv["model-seed"] = std::to_string(seed);
  kv["win-len"] = std::to_string(stft.win_len);
  kv["hop"] = std::to_string(stft.hop);
  kv["n-fft"] = std::to_string(stft.n_fft);
  kv["window"] = window_name(stft.window);
  kv["center"] = stft.center ? "true" : "false";
  return kv;
}

std::vector<std::string> ApssConfig::apply_key_values(const std::map<std::string, std::string>& kv) {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : kv) {
    if (key == "channels") channels = parse_size(key, value);
    else if (key == "blocks") blocks = parse_size(key, value);
    else if (key == "heads") heads = parse_size(key, value);
    else if (key == "freq-downsample") freq_downsample = parse_size(key, value);
    else if (key == "densenet-dilations") {
      densenet_dilations.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) densenet_dilations.push_back(parse_size(key, item));
    } else if (key == "ffn-hidden") ffn_hidden = parse_size(key, value);
    else if (key == "norm-groups") norm_groups = parse_size(key, value);
    else if (key == "ffn-kernel") ffn_kernel = parse_size(key, value);
    else if (key == "dropout") dropout = parse_double(key, value);
    else if (key == "no-fc") no_feature_combiner = parse_bool(key, value);
    else if (key == "no-pea") no_pea = parse_bool(key, value);
    else if (key == "no-am") no_amp_mask = parse_bool(key, value);
    else if (key == "model-seed") seed = parse_size(key, value);
    else if (key == "win-len") stft.win_len = parse_size(key, value);
    else if (key == "hop") stft.hop = parse_size(key, value);
    else if (key == "n-fft") stft.n_fft = parse_size(key, value);
    else if (key == "window") {
      if (value == "hann") stft.window = WindowKind::hann;
      else if (value == "hamming") stft.window = WindowKind::hamming;
      else if (value == "rectangular") stft.window = WindowKind::rectangular;
      else throw ConfigError("config: unknown window '" + value + "'");
    } else if (key == "center") stft.center = parse_bool(key, value);
    else unknown.push_back(key);
  }
  return unknown;
}

template <typename T>
Tensor<T> stack_spectra(const Spectra<T>& spectra) {
  const std::size_t n = spectra.frames * spectra.bins;
  if (spectra.amplitude.size() != n || spectra.phase.size() != n) {
    throw ShapeError("stack_spectra: amplitude/phase buffers do not match frames x bins");
  }
  std::vector<T> data;
  data.reserve(2 * n);
  data.insert(data.end(), spectra.amplitude.begin(), spectra.amplitude.end());
  data.insert(data.end(), spectra.phase.begin(), spectra.phase.end());
  return Tensor<T>::from_data({2, spectra.frames, spectra.bins}, std::move(data));
}

// ---------------------------------------------------------------------------

template <typename T>
ConvBlock<T>::ConvBlock(const ConvSpec& spec, std::mt19937_64& rng)
    : conv_(spec, rng), norm_(spec.out_ch), act_(spec.out_ch) {}

template <typename T>
Tensor<T> ConvBlock<T>::operator()(const Tensor<T>& x) const {
  return act_(norm_(conv_(x)));
}

template <typename T>
void ConvBlock<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  conv_.collect_parameters(prefix + ".conv", out);
  norm_.collect_parameters(prefix + ".norm", out);
  act_.collect_parameters(prefix + ".act", out);
}

template <typename T>
DilatedDenseNet<T>::DilatedDenseNet(std::size_t channels, const std::vector<std::size_t>& dilations,
                                    std::mt19937_64& rng)
    : channels_(channels), dilations_(dilations) {
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    ConvSpec spec = conv_spec((i + 1) * channels, channels, 2, 3, 1);
    spec.geometry.dilation_t = dilations[i];
    spec.geometry.pad_top = dilations[i];
    layers_.emplace_back(spec, rng);
  }
}

template <typename T>
Tensor<T> DilatedDenseNet<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(0) != channels_) {
    throw ShapeError("dilated_densenet: expected " + std::to_string(channels_) + " channels, got " +
                     shape_str(x.shape()));
  }
  Tensor<T> skip = x;
  Tensor<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out = layers_[i](skip);
    if (i + 1 < layers_.size()) skip = concat<T>({out, skip}, 0);
  }
  return out;
}

template <typename T>
void DilatedDenseNet<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect_parameters(prefix + ".layer" + std::to_string(i), out);
}

template <typename T>
std::size_t DilatedDenseNet<T>::receptive_field() const {
  std::size_t rf = 1;
  for (auto d : dilations_) rf += d;
  return rf;
}

template <typename T>
FeedForward<T>::FeedForward(std::size_t channels, std::size_t hidden, std::size_t kernel, std::mt19937_64& rng)
    : up_(channels, 2 * hidden, kernel, false, rng), down_(hidden, channels, kernel, true, rng) {}

template <typename T>
Tensor<T> FeedForward<T>::operator()(const Tensor<T>& x) const {
  return down_(swiglu(up_(x)));
}

template <typename T>
void FeedForward<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  up_.collect_parameters(prefix + ".conv", out);
  down_.collect_parameters(prefix + ".deconv", out);
}

template <typename T>
TransformerLayer<T>::TransformerLayer(const ApssConfig& cfg, std::mt19937_64& rng)
    : norm1_(cfg.channels, cfg.norm_groups),
      norm2_(cfg.channels, cfg.norm_groups),
      norm3_(cfg.channels, cfg.norm_groups),
      ffn1_(cfg.channels, cfg.hidden(), cfg.ffn_kernel, rng),
      ffn2_(cfg.channels, cfg.hidden(), cfg.ffn_kernel, rng),
      attn_(cfg.channels, cfg.heads, rng),
      dropout_(cfg.dropout) {}

template <typename T>
Tensor<T> TransformerLayer<T>::operator()(const Tensor<T>& x, std::mt19937_64* dropout_rng) const {
  auto drop = [&](const Tensor<T>& t) { return dropout_rng ? dropout(t, dropout_, *dropout_rng) : t; };
  auto y = add(x, drop(ffn1_(norm1_(x))));
  y = add(y, drop(attn_(norm2_(y))));
  return add(y, drop(ffn2_(norm3_(y))));
}

template <typename T>
void TransformerLayer<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  norm1_.collect_parameters(prefix + ".norm1", out);
  ffn1_.collect_parameters(prefix + ".ffn1", out);
  norm2_.collect_parameters(prefix + ".norm2", out);
  attn_.collect_parameters(prefix + ".attn", out);
  norm3_.collect_parameters(prefix + ".norm3", out);
  ffn2_.collect_parameters(prefix + ".ffn2", out);
}

template <typename T>
TfBlock<T>::TfBlock(const ApssConfig& cfg, std::mt19937_64& rng) : freq_(cfg, rng), time_(cfg, rng) {}

template <typename T>
Tensor<T> TfBlock<T>::operator()(const Tensor<T>& x, std::mt19937_64* dropout_rng) const {
  if (x.rank() != 3) throw ShapeError("tf_block: expected (C,T,F'), got " + shape_str(x.shape()));
  auto y = permute(x, {1, 2, 0});  // (T,F',C): sequences along frequency
  y = freq_(y, dropout_rng);
  y = permute(y, {1, 0, 2});       // (F',T,C): sequences along time
  y = time_(y, dropout_rng);
  return permute(y, {2, 1, 0});    // (C,T,F')
}

template <typename T>
void TfBlock<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  freq_.collect_parameters(prefix + ".freq", out);
  time_.collect_parameters(prefix + ".time", out);
}

template <typename T>
FeatureCombiner<T>::FeatureCombiner(const ApssConfig& cfg, std::mt19937_64& rng) : plain_(cfg.no_feature_combiner) {
  if (plain_) {
    plain_conv_ = Conv2d<T>(conv_spec(2, cfg.channels, 1, 3, cfg.freq_downsample), rng);
    return;
  }
  block_in_ = ConvBlock<T>(conv_spec(2, cfg.channels, 1, 3, 1), rng);
  dense_ = DilatedDenseNet<T>(cfg.channels, cfg.densenet_dilations, rng);
  block_out_ = ConvBlock<T>(conv_spec(cfg.channels, cfg.channels, 1, 3, cfg.freq_downsample), rng);
}

template <typename T>
Tensor<T> FeatureCombiner<T>::operator()(const Tensor<T>& x) const {
  if (debug_checks()) detail::check_finite(*x.node());
  if (plain_) return plain_conv_(x);
  return block_out_(dense_(block_in_(x)));
}

template <typename T>
void FeatureCombiner<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  if (plain_) {
    plain_conv_.collect_parameters(prefix + ".conv", out);
    return;
  }
  block_in_.collect_parameters(prefix + ".block_in", out);
  dense_.collect_parameters(prefix + ".dense", out);
  block_out_.collect_parameters(prefix + ".block_out", out);
}

template <typename T>
AmplitudeSeparator<T>::AmplitudeSeparator(const ApssConfig& cfg, std::mt19937_64& rng)
    : use_mask_(!cfg.no_amp_mask),
      bins_(cfg.freq_bins()),
      dense_(cfg.channels, cfg.densenet_dilations, rng),
      deconv_(cfg.channels, cfg.channels, cfg.freq_downsample, rng),
      norm_(cfg.channels),
      act_(cfg.channels),
      mask_conv_(conv_spec(cfg.channels, 2, 1, 3, 1), rng),
      mask_act_(2) {}

template <typename T>
void AmplitudeSeparator<T>::operator()(const Tensor<T>& deep, const Tensor<T>& mixture_amplitude,
                                       SeparatedSpectra<T>& out) const {
  auto y = deconv_(dense_(deep));
  if (y.dim(2) < bins_) throw Error("amplitude_separate: upsampled to fewer than " + std::to_string(bins_) + " bins");
  if (y.dim(2) != bins_) y = slice(y, 2, 0, bins_);
  y = act_(norm_(y));
  auto masks = mask_act_(mask_conv_(y));  // (2,T,F)
  auto [m1, m2] = split_pair(masks);
  if (m1.shape() != mixture_amplitude.shape()) {
    throw Error("amplitude_separate: mask shape " + shape_str(m1.shape()) + " differs from mixture " +
                shape_str(mixture_amplitude.shape()));
  }
  if (use_mask_) {
    out.mask1 = m1;
    out.mask2 = m2;
    out.amp1 = mul(m1, mixture_amplitude);
    out.amp2 = mul(m2, mixture_amplitude);
  } else {
    out.amp1 = m1;
    out.amp2 = m2;
  }
}

template <typename T>
void AmplitudeSeparator<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  dense_.collect_parameters(prefix + ".dense", out);
  deconv_.collect_parameters(prefix + ".deconv", out);
  norm_.collect_parameters(prefix + ".norm", out);
  act_.collect_parameters(prefix + ".act", out);
  mask_conv_.collect_parameters(prefix + ".mask_conv", out);
  mask_act_.collect_parameters(prefix + ".mask_act", out);
}

template <typename T>
PhaseSeparator<T>::PhaseSeparator(const ApssConfig& cfg, std::mt19937_64& rng)
    : use_pea_(!cfg.no_pea),
      bins_(cfg.freq_bins()),
      dense_(cfg.channels, cfg.densenet_dilations, rng),
      deconv_(cfg.channels, cfg.channels, cfg.freq_downsample, rng),
      norm_(cfg.channels),
      act_(cfg.channels),
      real_conv_(conv_spec(cfg.channels, 2, 1, 3, 1), rng) {
  if (use_pea_) imag_conv_ = Conv2d<T>(conv_spec(cfg.channels, 2, 1, 3, 1), rng);
}

template <typename T>
void PhaseSeparator<T>::operator()(const Tensor<T>& deep, SeparatedSpectra<T>& out) const {
  auto y = deconv_(dense_(deep));
  if (y.dim(2) < bins_) throw Error("phase_separate: upsampled to fewer than " + std::to_string(bins_) + " bins");
  if (y.dim(2) != bins_) y = slice(y, 2, 0, bins_);
  y = act_(norm_(y));
  if (!use_pea_) {
    auto [p1, p2] = split_pair(real_conv_(y));
    out.phase1 = p1;
    out.phase2 = p2;
    return;
  }
  auto [r1, r2] = split_pair(real_conv_(y));
  auto [i1, i2] = split_pair(imag_conv_(y));
  out.phase1 = atan2(i1, r1);
  out.phase2 = atan2(i2, r2);
}

template <typename T>
void PhaseSeparator<T>::collect_parameters(const std::string& prefix, NamedParameters<T>& out) const {
  dense_.collect_parameters(prefix + ".dense", out);
  deconv_.collect_parameters(prefix + ".deconv", out);
  norm_.collect_parameters(prefix + ".norm", out);
  act_.collect_parameters(prefix + ".act", out);
  real_conv_.collect_parameters(prefix + ".real_conv", out);
  if (use_pea_) imag_conv_.collect_parameters(prefix + ".imag_conv", out);
}

// ---------------------------------------------------------------------------

std::array<double, 2> mixture_gains(std::span<const float> mix, std::span<const float> est1,
                                    std::span<const float> est2) {
  if (est1.size() != mix.size() || est2.size() != mix.size()) {
    throw ShapeError("mixture_gains: estimates and mixture differ in length");
  }
  double a11 = 0.0, a12 = 0.0, a22 = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double e1 = est1[i], e2 = est2[i], m = mix[i];
    a11 += e1 * e1;
    a12 += e1 * e2;
    a22 += e2 * e2;
    b1 += e1 * m;
    b2 += e2 * m;
  }
  const double det = a11 * a22 - a12 * a12;
  if (det > 1e-9 * a11 * a22 && det > 0.0) return {(b1 * a22 - b2 * a12) / det, (b2 * a11 - b1 * a12) / det};
  const double shared = a11 + 2.0 * a12 + a22;
  if (shared > 0.0) {
    const double g = (b1 + b2) / shared;
    return {g, g};
  }
  return {1.0, 1.0};
}

namespace {
ApssConfig validated(ApssConfig cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

template <typename T>
ApssModel<T>::ApssModel(ApssConfig cfg) : cfg_(validated(std::move(cfg))), dropout_rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ull) {
  std::mt19937_64 rng(cfg_.seed);
  combiner_ = FeatureCombiner<T>(cfg_, rng);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) blocks_.emplace_back(cfg_, rng);
  amp_sep_ = AmplitudeSeparator<T>(cfg_, rng);
  phase_sep_ = PhaseSeparator<T>(cfg_, rng);
}

template <typename T>
Tensor<T> ApssModel<T>::deep_process(const Tensor<T>& e) const {
  std::mt19937_64* rng = (training_ && cfg_.dropout > 0.0) ? &dropout_rng_ : nullptr;
  Tensor<T> s = e;
  for (const auto& block : blocks_) s = block(s, rng);
  return s;
}

template <typename T>
ForwardTrace<T> ApssModel<T>::forward(std::span<const T> mixture) const {
  if (mixture.size() < cfg_.stft.win_len) {
    throw DataError("forward: input has " + std::to_string(mixture.size()) + " samples, needs at least " +
                    std::to_string(cfg_.stft.win_len));
  }
  const auto spectra = stft<T>(mixture, cfg_.stft);
  ForwardTrace<T> trace;
  trace.input = stack_spectra(spectra);
  auto amplitude = Tensor<T>::from_data({spectra.frames, spectra.bins}, spectra.amplitude);
  trace.fused = combiner_(trace.input);
  trace.deep = deep_process(trace.fused);
  trace.amplitude_separator_input = trace.deep.node().get();
  amp_sep_(trace.deep, amplitude, trace.spectra);
  trace.phase_separator_input = trace.deep.node().get();
  phase_sep_(trace.deep, trace.spectra);

  const std::size_t len = mixture.size();
  auto [re1, im1] = polar_to_complex(trace.spectra.amp1, trace.spectra.phase1);
  auto [re2, im2] = polar_to_complex(trace.spectra.amp2, trace.spectra.phase2);
  trace.wave1 = istft(re1, im1, cfg_.stft, len);
  trace.wave2 = istft(re2, im2, cfg_.stft, len);
  return trace;
}

template <typename T>
std::pair<Waveform, Waveform> ApssModel<T>::separate(const Waveform& mixture) const {
  NoGradGuard guard;
  std::vector<T> samples(mixture.samples.begin(), mixture.samples.end());
  auto trace = forward(std::span<const T>(samples));
  auto to_wave = [&](const Tensor<T>& t) {
    Waveform w;
    w.sample_rate = mixture.sample_rate;
    w.samples.assign(t.data().begin(), t.data().end());
    return w;
  };
  auto w1 = to_wave(trace.wave1), w2 = to_wave(trace.wave2);
  const auto [g1, g2] = mixture_gains(mixture.samples, w1.samples, w2.samples);
  for (auto& v : w1.samples) v = static_cast<float>(g1 * v);
  for (auto& v : w2.samples) v = static_cast<float>(g2 * v);
  return {std::move(w1), std::move(w2)};
}

template <typename T>
NamedParameters<T> ApssModel<T>::named_parameters() const {
  NamedParameters<T> out;
  combiner_.collect_parameters("combiner", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect_parameters("processor.block" + std::to_string(b), out);
  amp_sep_.collect_parameters("amp_sep", out);
  phase_sep_.collect_parameters("phase_sep", out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> ApssModel<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t ApssModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <typename T>
void ApssModel<T>::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

#define APSS_INSTANTIATE_MODEL(T)                          \
  template Tensor<T> stack_spectra(const Spectra<T>&);     \
  template class ConvBlock<T>;                             \
  template class DilatedDenseNet<T>;                       \
  template class FeedForward<T>;                           \
  template class TransformerLayer<T>;                      \
  template class TfBlock<T>;                               \
  template class FeatureCombiner<T>;                       \
  template class AmplitudeSeparator<T>;                    \
  template class PhaseSeparator<T>;                        \
  template class ApssModel<T>;

APSS_INSTANTIATE_MODEL(float)
APSS_INSTANTIATE_MODEL(double)

}  // namespace apss
