#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "apss/cli.hpp"
#include "apss/data_io.hpp"
#include "apss/errors.hpp"

using namespace apss;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("apss_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kTiny{"--channels", "8",          "--blocks",    "1",          "--heads", "2",
                                     "--norm-groups", "2",       "--batch-size", "2",         "--seg-len", "2000",
                                     "--warmup-steps", "2",      "--max-steps", "3"};

}  // namespace

TEST_CASE("usage errors") {
  auto r = run({});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"mix", "--src-a", "x.wav"}).code == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("mix matches the library") {
  auto dir = scratch("mix");
  auto pair = gen_toy_pair(3);
  write_wav(pair.source1, dir / "a.wav");
  write_wav(pair.source2, dir / "b.wav");
  auto r = run({"mix", "--src-a", (dir / "a.wav").string(), "--src-b", (dir / "b.wav").string(), "--snr-db", "2.5",
                "--out", (dir / "m.wav").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto got = read_wav(dir / "m.wav");
  auto m = mix_at_snr(read_wav(dir / "a.wav"), read_wav(dir / "b.wav"), {2.5, 0});
  REQUIRE(got.size() == m.mix.size());
  float worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got.samples[i] - m.mix.samples[i]));
  CHECK(worst <= 1.0f / 32768.0f);

  CHECK(run({"mix", "--src-a", (dir / "none.wav").string(), "--src-b", (dir / "b.wav").string(), "--snr-db", "0",
             "--out", (dir / "x.wav").string()})
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("gen-toy is reproducible") {
  auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(run({"gen-toy", "--n", "4", "--out", a.string(), "--seed", "7"}).code == 0);
  REQUIRE(run({"gen-toy", "--n", "4", "--out", b.string(), "--seed", "7"}).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CHECK(file_bytes(e.path()) == file_bytes(b / e.path().filename()));
  }
  CHECK(files == 13);
  CHECK(load_manifest(a / "manifest.tsv").size() == 4);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config files") {
  auto kv = cli::parse_config("# comment\nchannels = 16\n\nlr=0.002\n");
  CHECK(kv.at("channels") == "16");
  CHECK(kv.at("lr") == "0.002");
  CHECK_THROWS_AS(cli::parse_config("nonsense=1\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("channels\n"), ConfigError);

  auto dir = scratch("config");
  std::ofstream(dir / "bad.cfg") << "channels=8\nbogus-key=3\n";
  auto r = run({"train", "--train", "t.tsv", "--val", "v.tsv", "--out", (dir / "o").string(), "--config",
                (dir / "bad.cfg").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("bogus-key") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train, separate and evaluate") {
  auto dir = scratch("pipeline");
  REQUIRE(run({"gen-toy", "--n", "4", "--out", (dir / "data").string(), "--seed", "2"}).code == 0);
  const auto manifest = (dir / "data" / "manifest.tsv").string();
  std::vector<std::string> args{"train", "--train", manifest, "--val", manifest, "--out", (dir / "run").string()};
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  auto r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "run" / "last.ckpt"));
  CHECK(fs::exists(dir / "run" / "config.txt"));

  std::ofstream(dir / "ok.cfg") << "channels=8\nblocks=1\nheads=2\nnorm-groups=2\nmax-steps=1\nseg-len=2000\n";
  CHECK(run({"train", "--train", manifest, "--val", manifest, "--out", (dir / "run2").string(), "--config",
             (dir / "ok.cfg").string(), "--no-pea"})
            .code == 0);

  const auto input = dir / "data" / "utt00000_mix.wav";
  r = run({"separate", "--model", (dir / "run" / "last.ckpt").string(), "--input", input.string(), "--out-prefix",
           (dir / "sep").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto n = read_wav(input).size();
  CHECK(read_wav(dir / "sep.1.wav").size() == n);
  CHECK(read_wav(dir / "sep.2.wav").size() == n);

  r = run({"evaluate", "--model", (dir / "run" / "last.ckpt").string(), "--manifest", manifest, "--report",
           (dir / "report.tsv").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::ifstream rep(dir / "report.tsv");
  std::string header;
  std::getline(rep, header);
  CHECK(header == "utterance\tsi_snri_db\tsdri_db\tpermutation");

  CHECK(run({"separate", "--model", (dir / "missing.ckpt").string(), "--input", input.string(), "--out-prefix",
             (dir / "x").string()})
            .code == 2);
  fs::remove_all(dir);
}
