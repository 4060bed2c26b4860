#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apss/dsp.hpp"

namespace apss {

inline constexpr int kSampleRate = 8000;

// RIFF/WAVE, PCM 16-bit signed little-endian, mono. Samples scale by 1/32768.
Waveform read_wav(const std::filesystem::path& path);
Waveform decode_wav(const std::vector<std::uint8_t>& bytes);

// Clamps to [-1, 1 - 2^-15] and rounds to the nearest code.
void write_wav(const Waveform& wave, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const Waveform& wave);

struct MixSpec {
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

struct Mixture {
  Waveform mix;
  Waveform source1;
  Waveform source2;  // scaled
  double gain = 1.0;    // applied to source 2 before any peak normalization
  double peak_scale = 1.0;
};

// Truncates both sources to the shorter length, scales source 2 so that
// 10 log10(P1/P2') = snr_db, and jointly rescales all three signals when
// the mixture peak exceeds 1. mix == source1 + source2 sample for sample.
Mixture mix_at_snr(const Waveform& s1, const Waveform& s2, const MixSpec& spec);

struct ToyPair {
  Waveform source1;  // f0 in [100, 200] Hz
  Waveform source2;  // f0 in [250, 400] Hz
  double f0_1 = 0.0, f0_2 = 0.0;
};

// Two amplitude-modulated 3-harmonic tones, 1 s at 8 kHz, zero-mean,
// equal RMS before both are scaled to peak 0.5. Pure function of seed.
ToyPair gen_toy_pair(std::uint64_t seed);

struct ManifestEntry {
  std::string mixture;
  std::string source1;
  std::string source2;

  bool operator==(const ManifestEntry&) const = default;
};

using Manifest = std::vector<ManifestEntry>;

// One entry per line: mix<TAB>src1<TAB>src2. Relative paths resolve against
// the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct Utterance {
  std::string id;
  Waveform mixture, source1, source2;
};

Utterance load_utterance(const ManifestEntry& entry);

struct Segment {
  std::vector<float> mixture, source1, source2;
  std::size_t utterance = 0;
  std::size_t offset = 0;
};

using Batch = std::vector<Segment>;

// Random crops of seg_len samples with one offset per utterance shared by
// mixture and sources; shorter utterances are zero-padded on the right.
// Utterance order is shuffled by seed; the final batch may be short.
std::vector<Batch> segment_batch(const std::vector<Utterance>& utterances, std::size_t seg_len, std::size_t batch,
                                 std::uint64_t seed);

// Generates `count` toy mixtures (SNR uniform in [0,5] dB) under dir,
// writing WAVs and manifest.tsv. Returns the manifest path.
std::filesystem::path generate_toy_corpus(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed);

}  // namespace apss
