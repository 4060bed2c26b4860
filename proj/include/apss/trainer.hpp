#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "apss/data_io.hpp"
#include "apss/model.hpp"

namespace apss {

struct OptimConfig {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double eps = 1e-8;
  std::uint64_t warmup_steps = 4000;
  double plateau_factor = 0.5;
  std::uint64_t plateau_patience = 2;  // epochs
  double plateau_threshold = 1e-4;
  std::uint64_t max_epochs = 200;
  std::uint64_t max_steps = 0;  // 0: no limit
  double grad_clip = 0.0;       // L2 bound on the global gradient; 0 disables
  std::uint64_t batch_size = 4;
  std::uint64_t seg_len = 8000;
  std::uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_key_values() const;
  std::vector<std::string> apply_key_values(const std::map<std::string, std::string>& kv);
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;  // one buffer per parameter, lazily sized
};

// One AdamW update with bias-corrected moments and decoupled decay:
// p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p). Parameters without a
// gradient are treated as having a zero gradient. Any non-finite gradient
// aborts the step with NumericalError before anything is modified.
template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const OptimConfig& cfg, double lr);

// Scales all gradients so their joint L2 norm is at most max_norm. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm);

struct PlateauState {
  std::uint64_t events = 0;
  std::uint64_t bad_epochs = 0;
  double best = std::numeric_limits<double>::infinity();

  // Feeds one validation loss. Events count only once warmup has finished.
  void observe(double val_loss, bool warmup_done, const OptimConfig& cfg);
};

// Linear warmup to lr0 over warmup_steps, then lr0 * factor^events.
double lr_at(std::uint64_t step, const PlateauState& plateau, const OptimConfig& cfg);

struct HistoryRow {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainState {
  std::uint64_t step = 0;         // optimizer updates applied
  std::uint64_t epoch = 0;        // completed epochs
  std::uint64_t batch_index = 0;  // batches consumed in the current epoch
  double epoch_loss_sum = 0.0;
  PlateauState plateau;
  AdamState<float> adam;
  double best_val = std::numeric_limits<double>::infinity();
};

struct TrainOptions {
  OptimConfig optim;
  std::filesystem::path out_dir;  // empty: nothing written
  std::size_t log_every = 0;      // 0: silent
  std::function<void(const std::string&)> log;
  bool validate_each_epoch = true;
};

struct TrainResult {
  std::vector<double> step_losses;  // mean PIT loss (dB) of each batch
  std::vector<HistoryRow> history;
  TrainState state;
};

// Runs until max_epochs or max_steps. Losses are the negative summed SI-SNR
// of the best assignment, averaged over the batch. With out_dir set, writes
// history.tsv, last.ckpt after every epoch and at the step limit, and best.ckpt
// whenever validation improves. `resume` continues from a loaded state.
TrainResult train(ApssModel<float>& model, const std::vector<Utterance>& train_set,
                  const std::vector<Utterance>& val_set, const TrainOptions& options,
                  const TrainState* resume = nullptr);

std::vector<Utterance> load_utterances(const Manifest& manifest);

// Mean PIT loss over whole utterances without gradient tracking.
double validation_loss(const ApssModel<float>& model, const std::vector<Utterance>& set);

void write_history(const std::vector<HistoryRow>& rows, const std::filesystem::path& path);

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::vector<CheckpointTensor> tensors;
  std::map<std::string, std::string> meta;  // config snapshot and counters
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Model weights as "<name>", Adam moments as "adam.m.<name>" / "adam.v.<name>".
Checkpoint make_checkpoint(const ApssModel<float>& model, const TrainState* state, const OptimConfig* optim);

// Rebuilds the model from the config snapshot and copies its weights in.
ApssModel<float> model_from_checkpoint(const Checkpoint& ckpt);

// Copies weights into an existing model. Throws FormatError naming the first
// missing or mismatched tensor.
void load_weights(ApssModel<float>& model, const Checkpoint& ckpt);

TrainState train_state_from_checkpoint(const ApssModel<float>& model, const Checkpoint& ckpt);

}  // namespace apss
