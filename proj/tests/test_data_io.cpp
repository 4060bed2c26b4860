#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include "apss/data_io.hpp"

using namespace apss;
namespace fs = std::filesystem;

namespace {

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

std::vector<std::uint8_t> wav_bytes(const std::vector<std::int16_t>& codes, std::uint16_t channels = 1,
                                    std::uint16_t format = 1) {
  std::vector<std::uint8_t> b;
  const std::uint32_t data = static_cast<std::uint32_t>(codes.size() * 2);
  for (char c : std::string("RIFF")) b.push_back(c);
  put32(b, 36 + data);
  for (char c : std::string("WAVEfmt ")) b.push_back(c);
  put32(b, 16);
  put16(b, format);
  put16(b, channels);
  put32(b, 8000);
  put32(b, 8000 * 2 * channels);
  put16(b, 2 * channels);
  put16(b, 16);
  for (char c : std::string("data")) b.push_back(c);
  put32(b, data);
  for (auto c : codes) put16(b, static_cast<std::uint16_t>(c));
  return b;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("apss_test_data_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double power(const std::vector<float>& x) {
  double s = 0;
  for (float v : x) s += double(v) * v;
  return s / double(x.size());
}

double peak_frequency(const std::vector<float>& x) {
  double best = 0, best_f = 0;
  for (int f = 20; f <= 1000; ++f) {
    double re = 0, im = 0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double w = 2 * std::numbers::pi * f * double(n) / 8000.0;
      re += x[n] * std::cos(w);
      im -= x[n] * std::sin(w);
    }
    const double m = re * re + im * im;
    if (m > best) {
      best = m;
      best_f = f;
    }
  }
  return best_f;
}

Waveform tone(std::size_t n, double freq, double amp) {
  Waveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(float(amp * std::sin(2 * std::numbers::pi * freq * i / 8000.0)));
  return w;
}

}  // namespace

TEST_CASE("decode known fixture") {
  const std::vector<std::int16_t> codes{0, 1, -1, 16384, -16384, 32767, -32768, 100};
  auto w = decode_wav(wav_bytes(codes));
  CHECK(w.sample_rate == 8000);
  REQUIRE(w.samples.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(w.samples[i] == float(codes[i]) / 32768.0f);
  CHECK(w.samples[3] == 0.5f);
  CHECK(w.samples[6] == -1.0f);
}

TEST_CASE("decode errors") {
  CHECK_THROWS_AS(decode_wav(wav_bytes({1, 2, 3, 4}, 2)), FormatError);
  CHECK_THROWS_AS(decode_wav(wav_bytes({1, 2}, 1, 3)), FormatError);
  CHECK_THROWS_AS(decode_wav(wav_bytes({})), FormatError);
  try {
    decode_wav(wav_bytes({1, 2}, 2));
    FAIL("stereo accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  auto truncated = wav_bytes({1, 2, 3, 4});
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(decode_wav(truncated), FormatError);
  auto bad_tag = wav_bytes({1});
  bad_tag[0] = 'X';
  CHECK_THROWS_AS(decode_wav(bad_tag), FormatError);
  CHECK_THROWS_AS(read_wav(fs::temp_directory_path() / "apss_no_such_file.wav"), FormatError);
}

TEST_CASE("encode header is byte exact") {
  Waveform w;
  w.samples = {0.0f, 0.5f, -0.5f};
  auto b = encode_wav(w);
  REQUIRE(b.size() == 44 + 6);
  CHECK(std::memcmp(b.data(), "RIFF", 4) == 0);
  CHECK(std::memcmp(b.data() + 8, "WAVEfmt ", 8) == 0);
  CHECK(b == wav_bytes({0, 16384, -16384}));
}

TEST_CASE("wav roundtrip and clipping") {
  auto dir = scratch("roundtrip");
  Waveform w;
  for (int i = 0; i < 1000; ++i) w.samples.push_back(float(std::sin(0.37 * i) * 0.9));
  w.samples.push_back(1.5f);
  w.samples.push_back(-1.5f);
  write_wav(w, dir / "a.wav");
  auto r = read_wav(dir / "a.wav");
  REQUIRE(r.samples.size() == w.samples.size());
  for (int i = 0; i < 1000; ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0f / 32768.0f);
  CHECK(r.samples[1000] == 32767.0f / 32768.0f);
  CHECK(r.samples[1001] == -1.0f);
  Waveform bad;
  bad.samples = {0.0f, std::nanf("")};
  CHECK_THROWS_AS(encode_wav(bad), DataError);
  fs::remove_all(dir);
}

TEST_CASE("mix at snr") {
  auto a = tone(8000, 300, 0.3), b = tone(8000, 500, 0.3);
  auto m = mix_at_snr(a, b, {0.0, 1});
  CHECK(m.gain == doctest::Approx(1.0).epsilon(1e-5));
  m = mix_at_snr(a, b, {6.0206, 1});
  CHECK(m.gain == doctest::Approx(0.5).epsilon(1e-5));
  for (std::size_t i = 0; i < 8000; ++i) CHECK(m.mix.samples[i] == m.source1.samples[i] + m.source2.samples[i]);
  CHECK(std::abs(10 * std::log10(power(m.source1.samples) / power(m.source2.samples)) - 6.0206) <= 1e-6);

  auto c = tone(6000, 500, 0.3);
  m = mix_at_snr(a, c, {2.0, 1});
  CHECK(m.mix.size() == 6000);
  CHECK(m.source1.size() == 6000);
  CHECK(m.source2.size() == 6000);

  auto loud = mix_at_snr(tone(8000, 300, 0.9), tone(8000, 301, 0.9), {0.0, 1});
  CHECK(loud.peak_scale < 1.0);
  float pk = 0;
  for (float v : loud.mix.samples) pk = std::max(pk, std::abs(v));
  CHECK(pk <= 1.0f);
  for (std::size_t i = 0; i < 8000; ++i) CHECK(loud.mix.samples[i] == loud.source1.samples[i] + loud.source2.samples[i]);

  Waveform silent;
  silent.samples.assign(8000, 0.0f);
  CHECK_THROWS_AS(mix_at_snr(a, silent, {0.0, 1}), DataError);
  auto other_rate = b;
  other_rate.sample_rate = 16000;
  CHECK_THROWS_AS(mix_at_snr(a, other_rate, {0.0, 1}), DataError);
}

TEST_CASE("toy pairs") {
  auto p = gen_toy_pair(5), q = gen_toy_pair(5);
  CHECK(p.source1.samples == q.source1.samples);
  CHECK(p.source2.samples == q.source2.samples);
  CHECK(gen_toy_pair(6).source1.samples != p.source1.samples);
  for (std::uint64_t seed : {5u, 9u, 13u}) {
    auto t = gen_toy_pair(seed);
    REQUIRE(t.source1.size() == 8000);
    REQUIRE(t.source2.size() == 8000);
    CHECK(t.f0_1 >= 100);
    CHECK(t.f0_1 <= 200);
    CHECK(t.f0_2 >= 250);
    CHECK(t.f0_2 <= 400);
    const double f1 = peak_frequency(t.source1.samples), f2 = peak_frequency(t.source2.samples);
    CHECK(f1 < 250);
    CHECK(f2 > 250);
    CHECK(std::abs(f1 - t.f0_1) <= 3);
    CHECK(std::abs(f2 - t.f0_2) <= 3);
    for (const auto* s : {&t.source1, &t.source2}) {
      float pk = 0;
      for (float v : s->samples) pk = std::max(pk, std::abs(v));
      CHECK(pk == doctest::Approx(0.5f).epsilon(1e-6));
      const double mean = std::accumulate(s->samples.begin(), s->samples.end(), 0.0) / 8000.0;
      CHECK(std::abs(mean) < 1e-6);
    }
  }
}

TEST_CASE("manifest parsing") {
  auto m = parse_manifest("a.wav\tb.wav\tc.wav\nd\te\tf\r\n\ng\th\ti\n", "/base");
  REQUIRE(m.size() == 3);
  CHECK(m[0].mixture == (fs::path("/base") / "a.wav").string());
  CHECK(m[1].source2 == (fs::path("/base") / "f").string());
  CHECK(parse_manifest("/abs/x.wav\ty\tz\n", "/base")[0].mixture == "/abs/x.wav");
  try {
    parse_manifest("a\tb\tc\nbroken line\n");
    FAIL("malformed manifest accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_manifest("a\t\tc\n"), FormatError);
  CHECK_THROWS_AS(parse_manifest("a\tb\tc\td\n"), FormatError);

  auto dir = scratch("manifest");
  save_manifest(m, dir / "m.tsv");
  CHECK(load_manifest(dir / "m.tsv") == m);
  fs::remove_all(dir);
}

TEST_CASE("segment batches") {
  std::vector<Utterance> utts(5);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const std::size_t len = i == 0 ? 5000 : 12000;
    for (auto* w : {&utts[i].mixture, &utts[i].source1, &utts[i].source2}) {
      w->samples.resize(len);
      for (std::size_t n = 0; n < len; ++n) w->samples[n] = float(n + 1) + (w == &utts[i].source1 ? 0.25f : 0.0f);
    }
  }
  auto batches = segment_batch(utts, 8000, 2, 42);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 2);
  CHECK(batches[2].size() == 1);
  std::vector<bool> seen(5, false);
  for (const auto& b : batches)
    for (const auto& s : b) {
      seen[s.utterance] = true;
      REQUIRE(s.mixture.size() == 8000);
      CHECK(s.mixture[0] == float(s.offset + 1));
      CHECK(s.source1[0] == float(s.offset + 1) + 0.25f);
      CHECK(s.source2 == s.mixture);
      if (s.utterance == 0) {
        CHECK(s.offset == 0);
        CHECK(s.mixture[4999] == 5000.0f);
        CHECK(std::all_of(s.mixture.begin() + 5000, s.mixture.end(), [](float v) { return v == 0.0f; }));
        CHECK(std::count(s.source1.begin(), s.source1.end(), 0.0f) == 3000);
      } else {
        CHECK(s.offset <= 4000);
      }
    }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));

  auto again = segment_batch(utts, 8000, 2, 42);
  for (std::size_t i = 0; i < batches.size(); ++i)
    for (std::size_t j = 0; j < batches[i].size(); ++j) {
      CHECK(again[i][j].utterance == batches[i][j].utterance);
      CHECK(again[i][j].offset == batches[i][j].offset);
    }
  CHECK_THROWS_AS(segment_batch(utts, 0, 2, 1), ConfigError);
}

TEST_CASE("toy corpus") {
  auto dir = scratch("corpus");
  auto path = generate_toy_corpus(dir, 3, 8);
  auto m = load_manifest(path);
  REQUIRE(m.size() == 3);
  for (const auto& e : m) {
    auto u = load_utterance(e);
    REQUIRE(u.mixture.size() == 8000);
    for (std::size_t i = 0; i < 8000; ++i)
      CHECK(std::abs(u.mixture.samples[i] - u.source1.samples[i] - u.source2.samples[i]) <= 2.0f / 32768.0f);
  }
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  CHECK(first == "utt00000_mix.wav\tutt00000_s1.wav\tutt00000_s2.wav");
  fs::remove_all(dir);
}
