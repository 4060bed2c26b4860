#include "apss/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "apss/objective.hpp"
#include "key_value.hpp"

namespace apss {

using detail::format_double;

void OptimConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("optim: lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("optim: beta1 and beta2 must lie in (0, 1)");
  }
  if (weight_decay < 0.0 || !(eps > 0.0)) throw ConfigError("optim: weight-decay must be >= 0 and eps > 0");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ConfigError("optim: plateau-factor must lie in (0, 1]");
  if (grad_clip < 0.0) throw ConfigError("optim: grad-clip must be >= 0");
  if (batch_size == 0 || seg_len == 0) throw ConfigError("optim: batch-size and seg-len must be positive");
}

std::map<std::string, std::string> OptimConfig::to_key_values() const {
  return {
      {"lr", format_double(lr0)},
      {"beta1", format_double(beta1)},
      {"beta2", format_double(beta2)},
      {"weight-decay", format_double(weight_decay)},
      {"eps", format_double(eps)},
      {"warmup-steps", std::to_string(warmup_steps)},
      {"plateau-factor", format_double(plateau_factor)},
      {"plateau-patience", std::to_string(plateau_patience)},
      {"plateau-threshold", format_double(plateau_threshold)},
      {"max-epochs", std::to_string(max_epochs)},
      {"max-steps", std::to_string(max_steps)},
      {"grad-clip", format_double(grad_clip)},
      {"batch-size", std::to_string(batch_size)},
      {"seg-len", std::to_string(seg_len)},
      {"seed", std::to_string(seed)},
  };
}

std::vector<std::string> OptimConfig::apply_key_values(const std::map<std::string, std::string>& kv) {
  using detail::parse_double;
  using detail::parse_size;
  std::vector<std::string> unknown;
  for (const auto& [key, value] : kv) {
    if (key == "lr") lr0 = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "weight-decay") weight_decay = parse_double(key, value);
    else if (key == "eps") eps = parse_double(key, value);
    else if (key == "warmup-steps") warmup_steps = parse_size(key, value);
    else if (key == "plateau-factor") plateau_factor = parse_double(key, value);
    else if (key == "plateau-patience") plateau_patience = parse_size(key, value);
    else if (key == "plateau-threshold") plateau_threshold = parse_double(key, value);
    else if (key == "max-epochs") max_epochs = parse_size(key, value);
    else if (key == "max-steps") max_steps = parse_size(key, value);
    else if (key == "grad-clip") grad_clip = parse_double(key, value);
    else if (key == "batch-size") batch_size = parse_size(key, value);
    else if (key == "seg-len") seg_len = parse_size(key, value);
    else if (key == "seed") seed = parse_size(key, value);
    else unknown.push_back(key);
  }
  return unknown;
}

template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const OptimConfig& cfg, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    const auto g = params[i].grad();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(static_cast<double>(g[j]))) {
        throw NumericalError("adamw: non-finite gradient in parameter " + std::to_string(i) + " at element " +
                             std::to_string(j) + "; step aborted");
      }
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) {
      m.assign(p.size(), T(0));
      v.assign(p.size(), T(0));
    }
    const bool has = params[i].has_grad();
    const auto g = has ? params[i].grad() : std::span<const T>{};
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = has ? static_cast<double>(g[j]) : 0.0;
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + cfg.eps) + cfg.weight_decay * static_cast<double>(p[j]);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * update);
    }
  }
}

template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double ss = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (auto g : p.grad()) ss += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / (norm + 1e-12);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g = static_cast<T>(g * k);
    }
  }
  return norm;
}

void PlateauState::observe(double val_loss, bool warmup_done, const OptimConfig& cfg) {
  if (val_loss < best - cfg.plateau_threshold) {
    best = val_loss;
    bad_epochs = 0;
    return;
  }
  if (!warmup_done) return;
  bad_epochs += 1;
  if (bad_epochs >= cfg.plateau_patience) {
    events += 1;
    bad_epochs = 0;
  }
}

double lr_at(std::uint64_t step, const PlateauState& plateau, const OptimConfig& cfg) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.lr0 * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  return cfg.lr0 * std::pow(cfg.plateau_factor, static_cast<double>(plateau.events));
}

std::vector<Utterance> load_utterances(const Manifest& manifest) {
  std::vector<Utterance> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest) out.push_back(load_utterance(e));
  return out;
}

double validation_loss(const ApssModel<float>& model, const std::vector<Utterance>& set) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& u : set) {
    const auto [e1, e2] = model.separate(u.mixture);
    const std::span<const float> r1(u.source1.samples), r2(u.source2.samples);
    const double identity = si_snr(std::span<const float>(e1.samples), r1) + si_snr(std::span<const float>(e2.samples), r2);
    const double swapped = si_snr(std::span<const float>(e2.samples), r1) + si_snr(std::span<const float>(e1.samples), r2);
    total += -std::max(identity, swapped);
  }
  return total / static_cast<double>(set.size());
}

void write_history(const std::vector<HistoryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("history: cannot write " + path.string());
  out << "epoch\tstep\ttrain_loss\tval_loss\tlr\n";
  for (const auto& r : rows) {
    out << r.epoch << '\t' << r.step << '\t' << format_double(r.train_loss) << '\t' << format_double(r.val_loss) << '\t'
        << format_double(r.lr) << '\n';
  }
}

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (epoch + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

[[noreturn]] void diverged(const TrainOptions& options, const TrainResult& result, std::uint64_t epoch,
                           std::uint64_t batch, double loss) {
  std::ostringstream msg;
  msg << "train: non-finite loss " << loss << " at epoch " << epoch << " batch " << batch << " (step "
      << result.state.step + 1 << "); recent losses:";
  const std::size_t n = result.step_losses.size();
  for (std::size_t i = n > 10 ? n - 10 : 0; i < n; ++i) msg << ' ' << result.step_losses[i];
  if (!options.out_dir.empty()) {
    std::ofstream dump(options.out_dir / "divergence.txt");
    dump << msg.str() << '\n';
    for (std::size_t i = 0; i < n; ++i) dump << i + 1 << '\t' << format_double(result.step_losses[i]) << '\n';
  }
  throw NumericalError(msg.str());
}

}  // namespace

TrainResult train(ApssModel<float>& model, const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set, const TrainOptions& options, const TrainState* resume) {
  const OptimConfig& cfg = options.optim;
  cfg.validate();
  if (train_set.empty()) throw DataError("train: training set is empty");
  TrainResult result;
  if (resume) result.state = *resume;
  TrainState& st = result.state;
  auto params = model.parameters();
  model.set_training(true);

  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);
  auto save = [&](const std::string& file) {
    if (options.out_dir.empty()) return;
    save_checkpoint(make_checkpoint(model, &st, &cfg), options.out_dir / file);
  };
  auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };
  auto step_limit_reached = [&] { return cfg.max_steps > 0 && st.step >= cfg.max_steps; };

  while (st.epoch < cfg.max_epochs && !step_limit_reached()) {
    const auto batches = segment_batch(train_set, cfg.seg_len, cfg.batch_size, epoch_seed(cfg.seed, st.epoch));
    for (; st.batch_index < batches.size(); ++st.batch_index) {
      if (step_limit_reached()) break;
      const auto& batch = batches[st.batch_index];
      model.zero_grad();
      double loss_sum = 0.0;
      const float scale = 1.0f / static_cast<float>(batch.size());
      for (const auto& seg : batch) {
        auto trace = model.forward(std::span<const float>(seg.mixture));
        const auto r1 = Tensor<float>::from_data({seg.source1.size()}, seg.source1);
        const auto r2 = Tensor<float>::from_data({seg.source2.size()}, seg.source2);
        auto pit = pit_loss(trace.wave1, trace.wave2, r1, r2);
        const double value = pit.loss.item();
        if (!std::isfinite(value)) diverged(options, result, st.epoch, st.batch_index, value);
        mul_scalar(pit.loss, scale).backward();
        loss_sum += value;
      }
      const double mean = loss_sum / static_cast<double>(batch.size());
      if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
      const double lr = lr_at(st.step + 1, st.plateau, cfg);
      try {
        adamw_step(params, st.adam, cfg, lr);
      } catch (const NumericalError&) {
        diverged(options, result, st.epoch, st.batch_index, std::numeric_limits<double>::quiet_NaN());
      }
      st.step += 1;
      st.epoch_loss_sum += mean;
      result.step_losses.push_back(mean);
      if (options.log_every && st.step % options.log_every == 0) {
        log("step " + std::to_string(st.step) + " epoch " + std::to_string(st.epoch) + " loss " +
            format_double(mean) + " lr " + format_double(lr));
      }
    }
    if (st.batch_index < batches.size()) break;  // step limit inside the epoch

    HistoryRow row;
    row.epoch = st.epoch;
    row.step = st.step;
    row.train_loss = st.epoch_loss_sum / static_cast<double>(batches.size());
    row.lr = lr_at(st.step, st.plateau, cfg);
    if (options.validate_each_epoch && !val_set.empty()) {
      model.set_training(false);
      row.val_loss = validation_loss(model, val_set);
      model.set_training(true);
      st.plateau.observe(row.val_loss, st.step >= cfg.warmup_steps, cfg);
    } else {
      row.val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    result.history.push_back(row);
    log("epoch " + std::to_string(row.epoch) + " step " + std::to_string(row.step) + " train " +
        format_double(row.train_loss) + " val " + format_double(row.val_loss));
    st.epoch += 1;
    st.batch_index = 0;
    st.epoch_loss_sum = 0.0;
    if (row.val_loss < st.best_val) {
      st.best_val = row.val_loss;
      save("best.ckpt");
    }
    save("last.ckpt");
    if (!options.out_dir.empty()) write_history(result.history, options.out_dir / "history.tsv");
  }
  save("last.ckpt");
  if (!options.out_dir.empty()) write_history(result.history, options.out_dir / "history.tsv");
  model.set_training(false);
  return result;
}

template void adamw_step(std::vector<Tensor<float>>&, AdamState<float>&, const OptimConfig&, double);
template void adamw_step(std::vector<Tensor<double>>&, AdamState<double>&, const OptimConfig&, double);
template double clip_grad_norm(std::vector<Tensor<float>>&, double);
template double clip_grad_norm(std::vector<Tensor<double>>&, double);

}  // namespace apss
