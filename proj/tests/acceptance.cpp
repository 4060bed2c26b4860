// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status 1
// if any fails. Arguments select criteria by number (default: all).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "apss/gradcheck.hpp"
#include "apss/metrics.hpp"
#include "apss/trainer.hpp"
#include "test_util.hpp"

using namespace apss;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

template <typename T>
std::vector<T> random_signal(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> x(n);
  for (auto& v : x) v = static_cast<T>(u(rng));
  return x;
}

ApssConfig toy_model_config(std::uint64_t seed) {
  ApssConfig cfg;
  cfg.channels = 32;
  cfg.blocks = 2;
  cfg.heads = 4;
  cfg.seed = seed;
  return cfg;
}

std::vector<Utterance> toy_corpus(const fs::path& dir, std::size_t n, std::uint64_t seed) {
  return load_utterances(load_manifest(generate_toy_corpus(dir, n, seed)));
}

// ---------------------------------------------------------------------------

Verdict stft_fidelity() {
  const StftConfig cfg;
  std::mt19937_64 rng(101);
  double worst_f = 0.0, worst_d = 0.0;
  const auto t0 = Clock::now();
  for (int i = 0; i < 100; ++i) {
    auto xd = random_signal<double>(8000, rng);
    std::vector<float> xf(xd.begin(), xd.end());
    worst_d = std::max(worst_d, testutil::relative_l2(istft(stft<double>(xd, cfg), cfg, xd.size()), xd));
    worst_f = std::max(worst_f, testutil::relative_l2(istft(stft<float>(xf, cfg), cfg, xf.size()), xf));
  }
  const double elapsed = seconds_since(t0);
  return {worst_f <= 1e-5 && worst_d <= 1e-10 && elapsed < 5.0,
          "max rel L2 float " + fmt(worst_f) + " double " + fmt(worst_d) + ", " + fmt(elapsed, 3) + " s"};
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  bool all = true;
  std::string failed;
  run_gradient_suite({}, [&](const GradCheckReport& r) {
    std::cout << "    " << r.name << " max_rel " << fmt(r.max_rel_error, 3) << " tol " << fmt(r.tolerance, 1)
              << (r.passed ? " ok" : " FAILED") << std::endl;
    if (!r.passed) {
      all = false;
      failed += " " + r.name;
    }
  });
  const double elapsed = seconds_since(t0);
  return {all && elapsed < 600.0, (all ? std::string("all checks within tolerance") : "failed:" + failed) + ", " +
                                      fmt(elapsed, 3) + " s"};
}

Verdict loss_identities() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> noise(0.0, 0.3);
  double form_gap = 0.0, scale_gap = 0.0;
  std::size_t pit_bad = 0;
  using TD = Tensor<double>;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 64 + rng() % 512;
    auto r1 = random_signal<double>(n, rng), r2 = random_signal<double>(n, rng);
    auto e1 = r1, e2 = r2;
    for (auto& v : e1) v += noise(rng);
    for (auto& v : e2) v += noise(rng);
    auto t = [n](const std::vector<double>& v) { return TD::from_data({n}, v); };
    const double sum_form = pair_loss(t(e1), t(e2), t(r1), t(r2)).item();
    form_gap = std::max(form_gap, std::abs(sum_form - pair_loss_product_form(e1, e2, r1, r2)));

    const double base = si_snr(t(e1), t(r1)).item();
    for (double a : {0.5, 2.0, 10.0}) scale_gap = std::max(scale_gap, std::abs(si_snr(mul_scalar(t(e1), a), t(r1)).item() - base));

    const auto aligned = pit_loss(t(e1), t(e2), t(r1), t(r2));
    const auto swapped = pit_loss(t(e2), t(e1), t(r1), t(r2));
    if (aligned.permutation != Permutation::identity || swapped.permutation != Permutation::swap ||
        swapped.loss.item() != aligned.loss.item())
      ++pit_bad;
  }
  return {form_gap <= 1e-6 && scale_gap <= 1e-4 && pit_bad == 0,
          "product/sum gap " + fmt(form_gap) + " dB, scale gap " + fmt(scale_gap) + " dB, PIT mismatches " +
              std::to_string(pit_bad) + "/1000"};
}

Verdict phase_ceiling() {
  const StftConfig cfg;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> snr(0.0, 5.0);
  double true_phase = 0.0, mix_phase = 0.0;
  std::size_t count = 0;
  for (int i = 0; i < 100; ++i) {
    const auto pair = gen_toy_pair(rng());
    const auto m = mix_at_snr(pair.source1, pair.source2, {snr(rng), 0});
    const auto mix_spec = stft(m.mix, cfg);
    for (const auto* src : {&m.source1, &m.source2}) {
      const std::span<const float> ref(src->samples);
      auto spec = stft(*src, cfg);
      true_phase += si_snr(std::span<const float>(istft(spec, cfg, ref.size())), ref);
      spec.phase = mix_spec.phase;
      mix_phase += si_snr(std::span<const float>(istft(spec, cfg, ref.size())), ref);
      ++count;
    }
  }
  true_phase /= double(count);
  mix_phase /= double(count);
  return {true_phase - mix_phase >= 10.0, "mean SI-SNR true phase " + fmt(true_phase) + " dB, mixture phase " +
                                              fmt(mix_phase) + " dB, gap " + fmt(true_phase - mix_phase) + " dB"};
}

// Held-out training run on the toy corpus.
constexpr std::uint64_t kToySteps = 3000;
constexpr std::uint64_t kToyWarmup = 200;
constexpr double kToyLr = 1e-3;

Verdict toy_training(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto train_set = toy_corpus(work / "toy_train", 500, 11);
  const auto test_manifest = load_manifest(generate_toy_corpus(work / "toy_test", 50, 12));
  const auto test_set = load_utterances(test_manifest);
  ApssModel<float> model(toy_model_config(0));
  TrainOptions opts;
  opts.optim.lr0 = kToyLr;
  opts.optim.warmup_steps = kToyWarmup;
  opts.optim.batch_size = 2;
  opts.optim.max_steps = kToySteps;
  opts.optim.seed = 0;
  opts.out_dir = work / "toy_run";
  opts.log_every = 250;
  opts.log = [](const std::string& line) { std::cout << "    " << line << std::endl; };
  const auto result = train(model, train_set, test_set, opts);

  // Score the checkpoint with the best held-out loss.
  const auto best = model_from_checkpoint(load_checkpoint(work / "toy_run" / "best.ckpt"));
  const auto report = evaluate_set(best, test_manifest);
  const double elapsed = seconds_since(t0);
  const bool pass = result.state.step <= 5000 && elapsed <= 7200.0 && report.mean_si_snri_db >= 5.0 &&
                    report.mean_sdri_db >= report.mean_si_snri_db - 1.0;
  return {pass, std::to_string(result.state.step) + " steps, SI-SNRi " + fmt(report.mean_si_snri_db) + " dB, SDRi " +
                    fmt(report.mean_sdri_db) + " dB, " + fmt(elapsed / 60.0, 3) + " min"};
}

Verdict ablations(const fs::path& work) {
  const auto train_set = toy_corpus(work / "ablation_data", 16, 21);
  const std::size_t base = ApssModel<float>(toy_model_config(0)).parameter_count();
  const std::size_t branch = 32 * 2 * 3 + 2;  // one conv2d(C->2, k=(1,3)) with bias
  bool pass = true;
  std::string detail = "base " + std::to_string(base);
  for (const std::string variant : {"no-fc", "no-pea", "no-am"}) {
    auto cfg = toy_model_config(0);
    cfg.no_feature_combiner = variant == "no-fc";
    cfg.no_pea = variant == "no-pea";
    cfg.no_amp_mask = variant == "no-am";
    ApssModel<float> model(cfg);
    TrainOptions opts;
    opts.optim.batch_size = 2;
    opts.optim.max_epochs = 1;
    opts.optim.warmup_steps = 4;
    opts.validate_each_epoch = false;
    bool finite = false;
    try {
      const auto r = train(model, train_set, {}, opts);
      finite = r.step_losses.size() == 8;
      for (double l : r.step_losses) finite = finite && std::isfinite(l);
    } catch (const Error& e) {
      std::cout << "    " << variant << ": " << e.what() << std::endl;
    }
    const std::size_t n = model.parameter_count();
    bool delta = false;
    if (variant == "no-fc") delta = n < base;
    if (variant == "no-pea") delta = n + branch == base;
    if (variant == "no-am") delta = n == base;
    pass = pass && finite && delta;
    detail += ", " + variant + " " + std::to_string(n) + (finite ? " finite" : " NON-FINITE") + (delta ? "" : " BAD-DELTA");
  }
  return {pass, detail};
}

Verdict determinism(const fs::path& work) {
  const auto train_set = toy_corpus(work / "det_data", 8, 31);
  TrainOptions opts;
  opts.optim.batch_size = 2;
  opts.optim.warmup_steps = 4;
  opts.optim.max_steps = 7;
  opts.optim.seed = 9;
  opts.validate_each_epoch = false;
  ApssModel<float> a(toy_model_config(5)), b(toy_model_config(5));
  const auto ra = train(a, train_set, {}, opts);
  const auto rb = train(b, train_set, {}, opts);
  double trace_gap = ra.step_losses.size() == rb.step_losses.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(ra.step_losses.size(), rb.step_losses.size()); ++i)
    trace_gap = std::max(trace_gap, std::abs(ra.step_losses[i] - rb.step_losses[i]));

  auto part = opts;
  part.optim.max_steps = 5;
  part.out_dir = work / "det_run";
  ApssModel<float> c(toy_model_config(5));
  train(c, train_set, {}, part);
  const auto ckpt = load_checkpoint(part.out_dir / "last.ckpt");
  auto resumed = model_from_checkpoint(ckpt);
  auto state = train_state_from_checkpoint(resumed, ckpt);
  const auto rr = train(resumed, train_set, {}, opts, &state);
  const double resume_gap =
      rr.step_losses.empty() ? INFINITY : std::abs(rr.step_losses.front() - ra.step_losses[5]);

  save_checkpoint(ckpt, work / "det_copy.ckpt");
  const bool identical = encode_checkpoint(load_checkpoint(work / "det_copy.ckpt")) ==
                         encode_checkpoint(load_checkpoint(part.out_dir / "last.ckpt"));
  return {trace_gap <= 1e-7 && resume_gap <= 1e-6 && identical,
          "trace gap " + fmt(trace_gap) + ", resume gap " + fmt(resume_gap) + ", save/load/save " +
              (identical ? "byte-identical" : "DIFFERS")};
}

Verdict shape_contract() {
  ApssModel<float> model(ApssConfig{});
  std::mt19937_64 rng(808);
  const auto x = random_signal<float>(8000, rng);
  NoGradGuard guard;
  const auto tr = model.forward(x);
  const Shape spec{126, 65};
  const auto& s = tr.spectra;
  const bool pass = tr.input.shape() == Shape{2, 126, 65} && tr.fused.shape() == Shape{128, 126, 33} &&
                    tr.deep.shape() == Shape{128, 126, 33} && s.amp1.shape() == spec && s.amp2.shape() == spec &&
                    s.phase1.shape() == spec && s.phase2.shape() == spec && tr.wave1.shape() == Shape{8000} &&
                    tr.wave2.shape() == Shape{8000};
  return {pass, shape_str(tr.input.shape()) + " -> " + shape_str(tr.fused.shape()) + " -> " +
                    shape_str(tr.deep.shape()) + " -> " + shape_str(s.amp1.shape()) + " x4, waves " +
                    shape_str(tr.wave1.shape()) + " " + shape_str(tr.wave2.shape())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const fs::path work = fs::current_path() / "acceptance_work";
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"stft fidelity", stft_fidelity},
      {"gradient suite", gradient_suite},
      {"loss identities", loss_identities},
      {"phase ceiling", phase_ceiling},
      {"toy training", [&] { return toy_training(work); }},
      {"ablation structure", [&] { return ablations(work); }},
      {"determinism and persistence", [&] { return determinism(work); }},
      {"shape contract", shape_contract},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << v.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
