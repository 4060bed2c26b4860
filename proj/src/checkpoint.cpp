#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "apss/trainer.hpp"
#include "key_value.hpp"

namespace apss {

namespace {

void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > b_.size()) {
      throw FormatError(std::string("checkpoint: truncated while reading ") + what + " at byte offset " +
                        std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

void put_tensor(Checkpoint& ckpt, std::string name, const Shape& shape, std::span<const float> data) {
  ckpt.tensors.push_back({std::move(name), shape, std::vector<float>(data.begin(), data.end())});
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'A', 'P', 'S', 'S'});
  put_u32(b, ckpt.version);
  put_u32(b, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("checkpoint: tensor name too long");
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("checkpoint: rank too large");
    if (shape_numel(t.shape) != t.data.size()) {
      throw FormatError("checkpoint: tensor '" + t.name + "' data does not match shape " + shape_str(t.shape));
    }
    put_u16(b, static_cast<std::uint16_t>(t.name.size()));
    b.insert(b.end(), t.name.begin(), t.name.end());
    put_u8(b, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(b, static_cast<std::uint32_t>(d));
    for (float v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(b, bits);
    }
  }
  std::string block;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("checkpoint: metadata key '" + k + "' is not representable");
    }
    block += k + "=" + v + "\n";
  }
  put_u32(b, static_cast<std::uint32_t>(block.size()));
  b.insert(b.end(), block.begin(), block.end());
  return b;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.bytes(4, "magic") != "APSS") throw FormatError("checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(ckpt.version));
  }
  const std::uint32_t count = r.u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.bytes(r.u16("name length"), "tensor name");
    const std::uint8_t rank = r.u8("rank");
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.u32("dims"));
    const std::size_t n = shape_numel(t.shape);
    r.need(4 * n, "tensor data");
    t.data.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint32_t bits = r.u32("tensor data");
      std::memcpy(&t.data[j], &bits, 4);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  const std::string block = r.bytes(r.u32("metadata length"), "metadata");
  if (!r.done()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.pos()));
  std::size_t start = 0;
  while (start < block.size()) {
    const auto end = block.find('\n', start);
    if (end == std::string::npos) throw FormatError("checkpoint: unterminated metadata line");
    const std::string line = block.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: metadata line without '=': " + line);
    ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Checkpoint make_checkpoint(const ApssModel<float>& model, const TrainState* state, const OptimConfig* optim) {
  using detail::format_double;
  Checkpoint ckpt;
  ckpt.version = kCheckpointVersion;
  const auto named = model.named_parameters();
  for (const auto& [name, p] : named) put_tensor(ckpt, name, p.shape(), p.data());
  ckpt.meta = model.config().to_key_values();
  if (optim) {
    for (const auto& [k, v] : optim->to_key_values()) ckpt.meta["optim." + k] = v;
  }
  if (state) {
    if (state->adam.m.size() == named.size()) {
      for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& [name, p] = named[i];
        if (state->adam.m[i].empty()) continue;
        put_tensor(ckpt, "adam.m." + name, p.shape(), state->adam.m[i]);
        put_tensor(ckpt, "adam.v." + name, p.shape(), state->adam.v[i]);
      }
    }
    ckpt.meta["state.step"] = std::to_string(state->step);
    ckpt.meta["state.epoch"] = std::to_string(state->epoch);
    ckpt.meta["state.batch-index"] = std::to_string(state->batch_index);
    ckpt.meta["state.epoch-loss-sum"] = format_double(state->epoch_loss_sum);
    ckpt.meta["state.adam-step"] = std::to_string(state->adam.step);
    ckpt.meta["state.plateau-events"] = std::to_string(state->plateau.events);
    ckpt.meta["state.plateau-bad-epochs"] = std::to_string(state->plateau.bad_epochs);
    ckpt.meta["state.plateau-best"] = format_double(state->plateau.best);
    ckpt.meta["state.best-val"] = format_double(state->best_val);
  }
  return ckpt;
}

ApssModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> model_keys;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("optim.", 0) != 0 && k.rfind("state.", 0) != 0) model_keys[k] = v;
  }
  ApssConfig cfg;
  const auto unknown = cfg.apply_key_values(model_keys);
  if (!unknown.empty()) throw FormatError("checkpoint: unknown config key '" + unknown.front() + "'");
  cfg.validate();
  ApssModel<float> model(cfg);
  load_weights(model, ckpt);
  return model;
}

void load_weights(ApssModel<float>& model, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  std::vector<std::string> problems;
  auto named = model.named_parameters();
  for (const auto& [name, p] : named) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back("tensor '" + name + "' missing");
    } else if (it->second->shape != p.shape()) {
      problems.push_back("tensor '" + name + "' has shape " + shape_str(it->second->shape) + ", model expects " +
                         shape_str(p.shape()));
    }
  }
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("adam.", 0) == 0) continue;
    const bool known = std::any_of(named.begin(), named.end(), [&](const auto& np) { return np.first == t.name; });
    if (!known) problems.push_back("tensor '" + t.name + "' not present in model");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint: " + problems.front();
    for (std::size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
    throw FormatError(msg);
  }
  for (auto& [name, p] : named) {
    const auto& src = by_name.at(name)->data;
    auto dst = p.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

TrainState train_state_from_checkpoint(const ApssModel<float>& model, const Checkpoint& ckpt) {
  using detail::parse_double;
  using detail::parse_size;
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw FormatError("checkpoint: missing training counter '" + key + "'");
    return it->second;
  };
  TrainState st;
  st.step = parse_size("state.step", get("state.step"));
  st.epoch = parse_size("state.epoch", get("state.epoch"));
  st.batch_index = parse_size("state.batch-index", get("state.batch-index"));
  st.epoch_loss_sum = parse_double("state.epoch-loss-sum", get("state.epoch-loss-sum"));
  st.adam.step = parse_size("state.adam-step", get("state.adam-step"));
  st.plateau.events = parse_size("state.plateau-events", get("state.plateau-events"));
  st.plateau.bad_epochs = parse_size("state.plateau-bad-epochs", get("state.plateau-bad-epochs"));
  st.plateau.best = parse_double("state.plateau-best", get("state.plateau-best"));
  st.best_val = parse_double("state.best-val", get("state.best-val"));

  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  const auto named = model.named_parameters();
  st.adam.m.assign(named.size(), {});
  st.adam.v.assign(named.size(), {});
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto m = by_name.find("adam.m." + named[i].first);
    const auto v = by_name.find("adam.v." + named[i].first);
    if (m == by_name.end() || v == by_name.end()) continue;
    if (m->second->shape != named[i].second.shape() || v->second->shape != named[i].second.shape()) {
      throw FormatError("checkpoint: optimizer moment for '" + named[i].first + "' has the wrong shape");
    }
    st.adam.m[i] = m->second->data;
    st.adam.v[i] = v->second->data;
  }
  return st;
}

}  // namespace apss
