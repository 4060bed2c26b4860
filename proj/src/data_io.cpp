#include "apss/data_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace apss {

namespace {

constexpr float kMaxSample = 1.0f - 1.0f / 32768.0f;

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

[[noreturn]] void wav_error(const std::string& what, std::size_t offset) {
  throw FormatError("wav: " + what + " at byte offset " + std::to_string(offset));
}

double power(const std::vector<float>& x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

float peak(const std::vector<float>& x) {
  float p = 0.0f;
  for (float v : x) p = std::max(p, std::abs(v));
  return p;
}

}  // namespace

Waveform decode_wav(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12) wav_error("truncated RIFF header", bytes.size());
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) wav_error("missing RIFF tag", 0);
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) wav_error("missing WAVE tag", 8);

  bool have_fmt = false;
  Waveform wave;
  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + at), 4);
    const std::uint32_t size = read_u32(bytes, at + 4);
    const std::size_t body = at + 8;
    if (body + size > bytes.size()) wav_error("truncated '" + id + "' chunk", at);
    if (id == "fmt ") {
      if (size < 16) wav_error("fmt chunk shorter than 16 bytes", at);
      const std::uint16_t format = read_u16(bytes, body);
      const std::uint16_t channels = read_u16(bytes, body + 2);
      const std::uint32_t rate = read_u32(bytes, body + 4);
      const std::uint16_t bits = read_u16(bytes, body + 14);
      if (format != 1) wav_error("unsupported audio format " + std::to_string(format) + " (PCM required)", body);
      if (channels != 1) wav_error("expected mono, found " + std::to_string(channels) + " channels", body + 2);
      if (bits != 16) wav_error("expected 16-bit samples, found " + std::to_string(bits), body + 14);
      if (rate == 0) wav_error("zero sample rate", body + 4);
      wave.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) wav_error("data chunk before fmt chunk", at);
      if (size == 0) wav_error("zero-length data chunk", at);
      if (size % 2 != 0) wav_error("odd data chunk size", at);
      wave.samples.resize(size / 2);
      for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        const auto code = static_cast<std::int16_t>(read_u16(bytes, body + 2 * i));
        wave.samples[i] = static_cast<float>(code) / 32768.0f;
      }
      return wave;
    }
    at = body + size + (size & 1u);
  }
  wav_error("no data chunk", at);
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("wav: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const Waveform& wave) {
  if (wave.sample_rate <= 0) throw DataError("wav: sample rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  std::vector<std::uint8_t> b;
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);
  put_u16(b, 1);
  put_u32(b, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(b, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (std::size_t i = 0; i < wave.samples.size(); ++i) {
    const float v = wave.samples[i];
    if (!std::isfinite(v)) throw DataError("wav: non-finite sample at index " + std::to_string(i));
    const float c = std::clamp(v, -1.0f, kMaxSample);
    const auto code = static_cast<std::int16_t>(std::lround(static_cast<double>(c) * 32768.0));
    put_u16(b, static_cast<std::uint16_t>(code));
  }
  return b;
}

void write_wav(const Waveform& wave, const std::filesystem::path& path) {
  const auto bytes = encode_wav(wave);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("wav: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("wav: write failed for " + path.string());
}

Mixture mix_at_snr(const Waveform& s1, const Waveform& s2, const MixSpec& spec) {
  if (!std::isfinite(spec.snr_db)) throw DataError("mix: snr must be finite");
  if (s1.sample_rate != s2.sample_rate) throw DataError("mix: sample rates differ");
  const std::size_t len = std::min(s1.size(), s2.size());
  if (len == 0) throw DataError("mix: empty source");
  Mixture m;
  m.source1.sample_rate = m.source2.sample_rate = m.mix.sample_rate = s1.sample_rate;
  m.source1.samples.assign(s1.samples.begin(), s1.samples.begin() + static_cast<std::ptrdiff_t>(len));
  std::vector<float> b(s2.samples.begin(), s2.samples.begin() + static_cast<std::ptrdiff_t>(len));
  const double p1 = power(m.source1.samples), p2 = power(b);
  if (p1 == 0.0 || p2 == 0.0) throw DataError("mix: zero-energy source");
  m.gain = std::sqrt(p1 / (p2 * std::pow(10.0, spec.snr_db / 10.0)));
  m.source2.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) m.source2.samples[i] = static_cast<float>(m.gain * b[i]);

  auto rebuild_mix = [&] {
    m.mix.samples.resize(len);
    for (std::size_t i = 0; i < len; ++i) m.mix.samples[i] = m.source1.samples[i] + m.source2.samples[i];
  };
  rebuild_mix();
  const float top = std::max({peak(m.mix.samples), peak(m.source1.samples), peak(m.source2.samples)});
  if (top > kMaxSample) {
    m.peak_scale = static_cast<double>(kMaxSample) / top;
    const auto k = static_cast<float>(m.peak_scale);
    for (auto& v : m.source1.samples) v *= k;
    for (auto& v : m.source2.samples) v *= k;
    rebuild_mix();
  }
  return m;
}

ToyPair gen_toy_pair(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const std::size_t len = kSampleRate;
  const double two_pi = 2.0 * std::numbers::pi;

  auto make = [&](double f0_lo, double f0_hi, double& f0_out) {
    const double f0 = uniform(f0_lo, f0_hi);
    const double am_rate = uniform(2.0, 8.0);
    const double am_phase = uniform(0.0, two_pi);
    const double am_depth = uniform(0.3, 0.9);
    std::array<double, 3> amp{}, phase{};
    for (std::size_t h = 0; h < 3; ++h) {
      amp[h] = uniform(0.5, 1.0) / static_cast<double>(h + 1);
      phase[h] = uniform(0.0, two_pi);
    }
    std::vector<double> x(len);
    for (std::size_t n = 0; n < len; ++n) {
      const double t = static_cast<double>(n) / kSampleRate;
      const double env = 1.0 + am_depth * std::sin(two_pi * am_rate * t + am_phase);
      double v = 0.0;
      for (std::size_t h = 0; h < 3; ++h) v += amp[h] * std::sin(two_pi * f0 * static_cast<double>(h + 1) * t + phase[h]);
      x[n] = env * v;
    }
    const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(len);
    double ss = 0.0;
    for (auto& v : x) {
      v -= mu;
      ss += v * v;
    }
    const double rms = std::sqrt(ss / static_cast<double>(len));
    double pk = 0.0;
    for (auto& v : x) {
      v /= rms;
      pk = std::max(pk, std::abs(v));
    }
    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples.resize(len);
    for (std::size_t n = 0; n < len; ++n) w.samples[n] = static_cast<float>(0.5 * x[n] / pk);
    f0_out = f0;
    return w;
  };

  ToyPair pair;
  pair.source1 = make(100.0, 200.0, pair.f0_1);
  pair.source2 = make(250.0, 400.0, pair.f0_2);
  return pair;
}

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  Manifest manifest;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base_dir.empty()) return (base_dir / path).string();
    return p;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || std::any_of(fields.begin(), fields.end(), [](const auto& f) { return f.empty(); })) {
      throw FormatError("manifest: line " + std::to_string(line_no) + " must hold 3 non-empty tab-separated paths");
    }
    manifest.push_back({resolve(fields[0]), resolve(fields[1]), resolve(fields[2])});
  }
  return manifest;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("manifest: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("manifest: cannot write " + path.string());
  for (const auto& e : manifest) out << e.mixture << '\t' << e.source1 << '\t' << e.source2 << '\n';
}

Utterance load_utterance(const ManifestEntry& entry) {
  Utterance u;
  u.id = std::filesystem::path(entry.mixture).stem().string();
  u.mixture = read_wav(entry.mixture);
  u.source1 = read_wav(entry.source1);
  u.source2 = read_wav(entry.source2);
  if (u.mixture.size() != u.source1.size() || u.mixture.size() != u.source2.size()) {
    throw DataError("utterance " + u.id + ": mixture and sources differ in length");
  }
  return u;
}

std::vector<Batch> segment_batch(const std::vector<Utterance>& utterances, std::size_t seg_len, std::size_t batch,
                                 std::uint64_t seed) {
  if (seg_len == 0 || batch == 0) throw ConfigError("segment_batch: seg_len and batch must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(utterances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  auto crop = [&](const std::vector<float>& x, std::size_t offset) {
    std::vector<float> out(seg_len, 0.0f);
    const std::size_t n = std::min(seg_len, x.size() - std::min(offset, x.size()));
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(offset), n, out.begin());
    return out;
  };

  std::vector<Batch> batches;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& u = utterances[order[i]];
    const std::size_t len = u.mixture.size();
    std::size_t offset = 0;
    if (len > seg_len) offset = std::uniform_int_distribution<std::size_t>(0, len - seg_len)(rng);
    if (i % batch == 0) batches.emplace_back();
    batches.back().push_back(
        {crop(u.mixture.samples, offset), crop(u.source1.samples, offset), crop(u.source2.samples, offset), order[i], offset});
  }
  return batches;
}

std::filesystem::path generate_toy_corpus(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> snr(0.0, 5.0);
  Manifest manifest;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t pair_seed = rng();
    const double snr_db = snr(rng);
    const auto pair = gen_toy_pair(pair_seed);
    const auto m = mix_at_snr(pair.source1, pair.source2, {snr_db, pair_seed});
    std::ostringstream stem;
    stem << "utt" << std::setw(5) << std::setfill('0') << i;
    const std::string mix_name = stem.str() + "_mix.wav";
    const std::string s1_name = stem.str() + "_s1.wav";
    const std::string s2_name = stem.str() + "_s2.wav";
    write_wav(m.mix, dir / mix_name);
    write_wav(m.source1, dir / s1_name);
    write_wav(m.source2, dir / s2_name);
    manifest.push_back({mix_name, s1_name, s2_name});
  }
  const auto path = dir / "manifest.tsv";
  save_manifest(manifest, path);
  return path;
}

}  // namespace apss
