#include "apss/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "apss/data_io.hpp"
#include "apss/gradcheck.hpp"
#include "apss/metrics.hpp"
#include "apss/model.hpp"
#include "apss/trainer.hpp"

namespace apss::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

const std::set<std::string>& boolean_flags() {
  static const std::set<std::string> flags{"no-fc", "no-pea", "no-am"};
  return flags;
}

std::set<std::string> config_keys() {
  std::set<std::string> keys;
  for (const auto& [k, v] : ApssConfig{}.to_key_values()) keys.insert(k);
  for (const auto& [k, v] : OptimConfig{}.to_key_values()) keys.insert(k);
  return keys;
}

struct Resolved {
  ApssConfig model;
  OptimConfig optim;
};

Resolved resolve_config(const std::map<std::string, std::string>& layered) {
  Resolved r;
  const auto after_model = r.model.apply_key_values(layered);
  std::map<std::string, std::string> rest;
  for (const auto& k : after_model) rest[k] = layered.at(k);
  const auto unknown = r.optim.apply_key_values(rest);
  if (!unknown.empty()) throw ConfigError("config: unknown key '" + unknown.front() + "'");
  if (!layered.count("model-seed") && layered.count("seed")) r.model.seed = r.optim.seed;
  r.model.validate();
  r.optim.validate();
  return r;
}

void write_config(const Resolved& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& [k, v] : r.model.to_key_values()) out << k << '=' << v << '\n';
  for (const auto& [k, v] : r.optim.to_key_values()) out << k << '=' << v << '\n';
}

int cmd_mix(const std::string& a, const std::string& b, double snr_db, const std::string& out_path, std::uint64_t seed,
            std::ostream& out) {
  const auto s1 = read_wav(a);
  const auto s2 = read_wav(b);
  const auto m = mix_at_snr(s1, s2, {snr_db, seed});
  write_wav(m.mix, out_path);
  out << "wrote " << out_path << " (" << m.mix.size() << " samples, gain " << m.gain << ", peak scale "
      << m.peak_scale << ")\n";
  return kOk;
}

int cmd_gen_toy(std::size_t n, const std::string& dir, std::uint64_t seed, std::ostream& out) {
  if (n == 0) throw ConfigError("gen-toy: --n must be positive");
  const auto manifest = generate_toy_corpus(dir, n, seed);
  out << "wrote " << n << " mixtures and " << manifest.string() << "\n";
  return kOk;
}

int cmd_train(const std::string& train_path, const std::string& val_path, const std::string& out_dir,
              const std::string& config_path, const std::string& resume_path, std::size_t log_every,
              const std::map<std::string, std::string>& overrides, std::ostream& out) {
  std::map<std::string, std::string> layered;
  if (!config_path.empty()) layered = load_config(config_path);
  for (const auto& [k, v] : overrides) layered[k] = v;
  auto cfg = resolve_config(layered);

  const auto train_set = load_utterances(load_manifest(train_path));
  const auto val_set = load_utterances(load_manifest(val_path));

  std::unique_ptr<ApssModel<float>> model;
  TrainState state;
  const TrainState* resume = nullptr;
  if (!resume_path.empty()) {
    const auto ckpt = load_checkpoint(resume_path);
    model = std::make_unique<ApssModel<float>>(model_from_checkpoint(ckpt));
    state = train_state_from_checkpoint(*model, ckpt);
    resume = &state;
    cfg.model = model->config();
  } else {
    model = std::make_unique<ApssModel<float>>(cfg.model);
  }
  std::filesystem::create_directories(out_dir);
  write_config(cfg, std::filesystem::path(out_dir) / "config.txt");
  out << "model parameters: " << model->parameter_count() << "\n";

  TrainOptions options;
  options.optim = cfg.optim;
  options.out_dir = out_dir;
  options.log_every = log_every;
  options.log = [&out](const std::string& line) { out << line << std::endl; };
  const auto result = train(*model, train_set, val_set, options, resume);
  out << "finished at step " << result.state.step << ", epoch " << result.state.epoch << "\n";
  return kOk;
}

int cmd_separate(const std::string& ckpt_path, const std::string& input, const std::string& prefix, std::ostream& out) {
  const auto model = model_from_checkpoint(load_checkpoint(ckpt_path));
  const auto wave = read_wav(input);
  if (wave.sample_rate != kSampleRate) {
    throw DataError("separate: expected " + std::to_string(kSampleRate) + " Hz input, got " +
                    std::to_string(wave.sample_rate));
  }
  const auto [a, b] = model.separate(wave);
  write_wav(a, prefix + ".1.wav");
  write_wav(b, prefix + ".2.wav");
  out << "wrote " << prefix << ".1.wav and " << prefix << ".2.wav\n";
  return kOk;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& manifest_path, const std::string& report_path,
                 std::ostream& out, std::ostream& err) {
  const auto model = model_from_checkpoint(load_checkpoint(ckpt_path));
  const auto report = evaluate_set(model, load_manifest(manifest_path));
  for (const auto& e : report.errors) err << "skipped: " << e << "\n";
  if (report_path.empty()) {
    write_report(report, out);
  } else {
    std::ofstream f(report_path);
    if (!f) throw FormatError("evaluate: cannot write " + report_path);
    write_report(report, f);
  }
  out << std::fixed << std::setprecision(3) << "utterances " << report.count() << " skipped " << report.skipped()
      << " mean SI-SNRi " << report.mean_si_snri_db << " dB, mean SDRi (sdr-plain) " << report.mean_sdri_db
      << " dB\n";
  return kOk;
}

int cmd_gradcheck(bool exhaustive, std::ostream& out) {
  GradSuiteOptions options;
  options.exhaustive = exhaustive;
  bool ok = true;
  run_gradient_suite(options, [&](const GradCheckReport& r) {
    ok = ok && r.passed;
    out << std::left << std::setw(20) << r.name << " max_rel " << std::scientific << std::setprecision(3)
        << r.max_rel_error << " tol " << r.tolerance << std::defaultfloat << " entries " << r.entries_checked
        << " refined " << r.entries_refined << " nonsmooth " << r.entries_nonsmooth << ' '
        << (r.passed ? "PASS" : "FAIL") << std::endl;
  });
  return ok ? kOk : kNumerical;
}

}  // namespace

std::map<std::string, std::string> parse_config(const std::string& text) {
  static const auto known = config_keys();
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
    const auto key = trim(line.substr(0, eq));
    if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(line_no));
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-speaker speech separation by parallel amplitude and phase estimation", "apss"};
  app.require_subcommand(1);

  auto* mix = app.add_subcommand("mix", "Mix two WAV files at a given SNR");
  std::string src_a, src_b, mix_out;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  mix->add_option("--src-a", src_a, "First source WAV")->required();
  mix->add_option("--src-b", src_b, "Second source WAV, rescaled to the SNR")->required();
  mix->add_option("--snr-db", snr_db, "Level of source a over source b in dB")->required();
  mix->add_option("--out", mix_out, "Output mixture WAV")->required();
  mix->add_option("--seed", seed, "Random seed");

  auto* gen = app.add_subcommand("gen-toy", "Generate a toy two-tone corpus with a manifest");
  std::size_t count = 0;
  std::string gen_out;
  gen->add_option("--n", count, "Number of mixtures")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", seed, "Random seed")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  std::string train_manifest, val_manifest, train_out, config_path, resume_path;
  std::size_t log_every = 50;
  tr->add_option("--train", train_manifest, "Training manifest")->required();
  tr->add_option("--val", val_manifest, "Validation manifest")->required();
  tr->add_option("--out", train_out, "Output directory")->required();
  tr->add_option("--config", config_path, "key=value configuration file");
  tr->add_option("--resume", resume_path, "Continue from a checkpoint written by train");
  tr->add_option("--log-every", log_every, "Progress line every N steps (0 for none)");
  std::map<std::string, std::string> option_values;
  std::map<std::string, bool> flag_values;
  std::map<std::string, CLI::Option*> config_options;
  for (const auto& key : config_keys()) {
    if (boolean_flags().count(key)) {
      config_options[key] = tr->add_flag("--" + key, flag_values[key], "Ablation variant");
    } else {
      config_options[key] = tr->add_option("--" + key, option_values[key], "Overrides config key " + key);
    }
  }

  auto* sep = app.add_subcommand("separate", "Separate one mixture WAV");
  std::string ckpt, input, prefix;
  sep->add_option("--model", ckpt, "Checkpoint")->required();
  sep->add_option("--input", input, "Mixture WAV")->required();
  sep->add_option("--out-prefix", prefix, "Writes PREFIX.1.wav and PREFIX.2.wav")->required();

  auto* ev = app.add_subcommand("evaluate", "Score a model on a manifest");
  std::string manifest, report;
  ev->add_option("--model", ckpt, "Checkpoint")->required();
  ev->add_option("--manifest", manifest, "Manifest of mixture and source WAVs")->required();
  ev->add_option("--report", report, "Tab-separated report path (stdout if omitted)");

  auto* gc = app.add_subcommand("gradcheck", "Verify analytic gradients against finite differences");
  bool exhaustive = false;
  gc->add_flag("--double", exhaustive, "Check every entry of every input in double precision");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*mix) return cmd_mix(src_a, src_b, snr_db, mix_out, seed, out);
    if (*gen) return cmd_gen_toy(count, gen_out, seed, out);
    if (*tr) {
      std::map<std::string, std::string> overrides;
      for (const auto& [key, opt] : config_options) {
        if (opt->count() == 0) continue;
        overrides[key] = boolean_flags().count(key) ? (flag_values[key] ? "true" : "false") : option_values[key];
      }
      return cmd_train(train_manifest, val_manifest, train_out, config_path, resume_path, log_every, overrides, out);
    }
    if (*sep) return cmd_separate(ckpt, input, prefix, out);
    if (*ev) return cmd_evaluate(ckpt, manifest, report, out, err);
    if (*gc) return cmd_gradcheck(exhaustive, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  err << app.help();
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace apss::cli
