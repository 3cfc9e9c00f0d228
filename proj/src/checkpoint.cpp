#include "recurseq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "json.hpp"
#include "recurseq/io.hpp"

namespace recurseq {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint8_t kDtypeFloat32 = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  bool get(U& v) {
    if (remaining() < sizeof(U)) return false;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return true;
  }
  bool get_bytes(std::size_t n, std::string_view& out) {
    if (remaining() < n) return false;
    out = bytes_.substr(pos_, n);
    pos_ += n;
    return true;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

json model_json(const ModelConfig& c) {
  return json{{"N", c.N},
              {"d", c.d},
              {"K", c.K},
              {"r", c.r},
              {"vocab_size", c.vocab_size},
              {"norm_mode", std::string(norm_mode_name(c.norm_mode))},
              {"padding_mode", std::string(padding_mode_name(c.padding_mode))},
              {"norm_momentum", c.norm_momentum}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.N = j.at("N").get<int>();
  c.d = j.at("d").get<std::size_t>();
  c.K = j.at("K").get<int>();
  c.r = j.at("r").get<int>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.norm_mode = parse_norm_mode(j.at("norm_mode").get<std::string>());
  c.padding_mode = parse_padding_mode(j.at("padding_mode").get<std::string>());
  c.norm_momentum = j.at("norm_momentum").get<double>();
  return c;
}

json train_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"momentum", t.momentum},
              {"clip_norm", t.clip_norm ? json(*t.clip_norm) : json(nullptr)},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"samples_per_epoch", t.samples_per_epoch},
              {"lr_decay_factor", t.lr_decay_factor},
              {"lr_decay_after_epoch", t.lr_decay_after_epoch},
              {"seed", t.seed},
              {"min_len", t.min_len},
              {"max_len", t.max_len}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.lr = j.at("lr").get<double>();
  t.momentum = j.at("momentum").get<double>();
  if (j.at("clip_norm").is_null()) {
    t.clip_norm.reset();
  } else {
    t.clip_norm = j.at("clip_norm").get<double>();
  }
  t.batch_size = j.at("batch_size").get<std::size_t>();
  t.epochs = j.at("epochs").get<int>();
  t.samples_per_epoch = j.at("samples_per_epoch").get<std::size_t>();
  t.lr_decay_factor = j.at("lr_decay_factor").get<double>();
  t.lr_decay_after_epoch = j.at("lr_decay_after_epoch").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.min_len = j.at("min_len").get<std::size_t>();
  t.max_len = j.at("max_len").get<std::size_t>();
  return t;
}

json parse_config_blob(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
}

// Named views of everything persisted for a set of parameters and stats.
struct TensorSlots {
  std::vector<std::pair<std::string, Tensor<float>*>> slots;
  std::map<std::string, NormStats<float>*> stats;

  void add_params(const std::vector<Parameter<float>*>& params) {
    for (auto* p : params) slots.emplace_back(p->name, &p->value);
  }
  void add_stats(const std::vector<NormStats<float>*>& all) {
    for (auto* s : all) {
      slots.emplace_back(s->name + ".running_mean", &s->running_mean);
      slots.emplace_back(s->name + ".running_var", &s->running_var);
      stats.emplace(s->name, s);
    }
  }
};

void collect_records(const TensorSlots& slots, std::vector<TensorRecord>& out) {
  for (const auto& [name, t] : slots.slots) out.push_back({name, *t});
}

json stats_updates(const TensorSlots& slots) {
  json j = json::object();
  for (const auto& [name, s] : slots.stats) j[name] = s->updates;
  return j;
}

void restore(TensorSlots& slots, std::map<std::string, Tensor<float>>& records, const json& updates) {
  for (auto& [name, t] : slots.slots) {
    const auto it = records.find(name);
    if (it == records.end()) throw DataError("checkpoint is missing tensor " + name);
    if (it->second.shape() != t->shape()) {
      throw DataError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                      shape_str(t->shape()));
    }
    *t = std::move(it->second);
    records.erase(it);
  }
  for (auto& [name, s] : slots.stats) {
    if (!updates.contains(name)) throw DataError("checkpoint is missing update count for " + name);
    s->updates = updates.at(name).get<std::uint64_t>();
  }
}

std::map<std::string, Tensor<float>> index_records(std::vector<TensorRecord> records) {
  std::map<std::string, Tensor<float>> out;
  for (auto& r : records) {
    if (!out.emplace(r.name, std::move(r.value)).second) throw DataError("checkpoint repeats tensor " + r.name);
  }
  return out;
}

void reject_leftovers(const std::map<std::string, Tensor<float>>& records) {
  if (!records.empty()) throw DataError("checkpoint has unexpected tensor " + records.begin()->first);
}

const std::string kVelocityPrefix = "optimizer.velocity.";

}  // namespace

std::string encode_checkpoint(const CheckpointFile& file) {
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, file.config_json.size());
  out += file.config_json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& rec : file.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    put<std::uint8_t>(out, kDtypeFloat32);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.value.rank()));
    for (std::size_t d : rec.value.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(rec.value.ptr()), rec.value.size() * sizeof(float));
  }
  return out;
}

CheckpointFile decode_checkpoint(std::string_view bytes) {
  Reader rd(bytes);
  std::string_view magic;
  if (!rd.get_bytes(4, magic) || magic != std::string_view(kCheckpointMagic, 4)) {
    throw DataError("not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  if (!rd.get(version)) throw DataError("truncated checkpoint header");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  std::uint64_t config_len = 0;
  std::string_view config;
  if (!rd.get(config_len) || !rd.get_bytes(config_len, config)) throw DataError("truncated checkpoint header");
  std::uint32_t count = 0;
  if (!rd.get(count)) throw DataError("truncated checkpoint header");

  CheckpointFile file;
  file.config_json = std::string(config);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    std::string_view name;
    if (!rd.get(name_len) || !rd.get_bytes(name_len, name)) {
      throw DataError("truncated record #" + std::to_string(i) + " (name)");
    }
    const std::string nm(name);
    std::uint8_t dtype = 0;
    std::uint32_t rank = 0;
    if (!rd.get(dtype) || !rd.get(rank)) throw DataError("truncated record " + nm);
    if (dtype != kDtypeFloat32) throw DataError("record " + nm + " has unknown dtype " + std::to_string(dtype));
    if (rank == 0 || rank > 8) throw DataError("record " + nm + " has invalid rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!rd.get(v)) throw DataError("truncated record " + nm);
      if (v == 0 || v > (std::uint64_t{1} << 40)) throw DataError("record " + nm + " has invalid dimension");
      d = static_cast<std::size_t>(v);
      numel *= v;
    }
    std::string_view data;
    if (numel > rd.remaining() / sizeof(float) || !rd.get_bytes(numel * sizeof(float), data)) {
      throw DataError("truncated record " + nm);
    }
    Tensor<float> t(shape);
    std::memcpy(t.ptr(), data.data(), data.size());
    file.tensors.push_back({nm, std::move(t)});
  }
  if (rd.remaining() != 0) throw DataError("checkpoint has trailing bytes");
  return file;
}

std::string model_config_json(const ModelConfig& config) { return model_json(config).dump(); }

void check_model_config(const ModelConfig& saved, const ModelConfig& expected) {
  std::string diff;
  const json a = model_json(saved), b = model_json(expected);
  for (const auto& [key, value] : a.items()) {
    if (b.at(key) != value) {
      diff += (diff.empty() ? "" : "; ") + key + ": checkpoint " + value.dump() + ", config " + b.at(key).dump();
    }
  }
  if (!diff.empty()) throw DataError("checkpoint does not match the run config (" + diff + ")");
}

void save_autoencoder(const std::filesystem::path& path, Autoencoder<float>& model, const TrainConfig* train,
                      const MomentumState<float>* optimizer, int epoch) {
  TensorSlots slots;
  const auto params = model.parameters();
  slots.add_params(params);
  slots.add_stats(model.norm_stats());
  json cfg{{"kind", "autoencoder"}, {"model", model_json(model.config())}, {"epoch", epoch}};
  if (train) cfg["train"] = train_json(*train);
  cfg["norm_updates"] = stats_updates(slots);
  CheckpointFile file;
  collect_records(slots, file.tensors);
  if (optimizer && !optimizer->velocity.empty()) {
    if (optimizer->velocity.size() != params.size()) throw std::invalid_argument("save: optimizer state mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      file.tensors.push_back({kVelocityPrefix + params[i]->name, optimizer->velocity[i]});
    }
  }
  file.config_json = cfg.dump();
  write_file_atomic(path, encode_checkpoint(file));
}

LoadedAutoencoder load_autoencoder(const std::filesystem::path& path, const ModelConfig* expected) {
  CheckpointFile file = decode_checkpoint(read_file(path));
  const json cfg = parse_config_blob(file.config_json);
  try {
    if (cfg.at("kind") != "autoencoder") throw DataError(path.string() + " is not an auto-encoder checkpoint");
    const ModelConfig mc = model_from_json(cfg.at("model"));
    if (expected) check_model_config(mc, *expected);
    LoadedAutoencoder out{Autoencoder<float>(mc, 0), std::nullopt, std::nullopt, cfg.value("epoch", 0)};
    if (cfg.contains("train")) out.train = train_from_json(cfg.at("train"));
    auto records = index_records(std::move(file.tensors));
    TensorSlots slots;
    const auto params = out.model.parameters();
    slots.add_params(params);
    slots.add_stats(out.model.norm_stats());
    restore(slots, records, cfg.at("norm_updates"));
    if (!records.empty()) {
      MomentumState<float> state;
      for (auto* p : params) {
        const auto it = records.find(kVelocityPrefix + p->name);
        if (it == records.end()) throw DataError("checkpoint is missing optimizer velocity for " + p->name);
        if (it->second.shape() != p->value.shape()) throw DataError("optimizer velocity shape mismatch for " + p->name);
        state.velocity.push_back(std::move(it->second));
        records.erase(it);
      }
      reject_leftovers(records);
      out.optimizer = std::move(state);
    }
    return out;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid checkpoint config: ") + e.what());
  }
}

void save_word_model(const std::filesystem::path& path, WordModel& model, const TrainConfig* train) {
  const WordEncoderConfig& wc = model.encoder.config();
  json cfg{{"kind", "word_encoder"},
           {"word", json{{"N", wc.N},
                         {"K", wc.K},
                         {"norm_mode", std::string(norm_mode_name(wc.norm_mode))},
                         {"norm_momentum", wc.norm_momentum},
                         {"max_words", wc.max_words}}},
           {"word_dim", model.encoder.dim()},
           {"vocab_size", model.encoder.vocab().size()},
           {"nli_hidden", model.head ? json(model.hidden) : json(nullptr)}};
  if (train) cfg["train"] = train_json(*train);
  TensorSlots slots;
  slots.add_params(model.encoder.parameters());
  slots.add_stats(model.encoder.norm_stats());
  if (model.head) slots.add_params(model.head->parameters());
  cfg["norm_updates"] = stats_updates(slots);
  CheckpointFile file;
  collect_records(slots, file.tensors);
  file.config_json = cfg.dump();
  write_file_atomic(path, encode_checkpoint(file));
}

WordModel load_word_model(const std::filesystem::path& path, const GloveTable& glove) {
  CheckpointFile file = decode_checkpoint(read_file(path));
  const json cfg = parse_config_blob(file.config_json);
  try {
    if (cfg.at("kind") != "word_encoder") throw DataError(path.string() + " is not a word-encoder checkpoint");
    const json& w = cfg.at("word");
    WordEncoderConfig wc;
    wc.N = w.at("N").get<int>();
    wc.K = w.at("K").get<int>();
    wc.norm_mode = parse_norm_mode(w.at("norm_mode").get<std::string>());
    wc.norm_momentum = w.at("norm_momentum").get<double>();
    wc.max_words = w.at("max_words").get<std::size_t>();
    const auto dim = cfg.at("word_dim").get<std::size_t>();
    const auto vocab = cfg.at("vocab_size").get<std::size_t>();
    if (dim != glove.dim) {
      throw DataError("word vectors have " + std::to_string(glove.dim) + " dims, checkpoint expects " +
                      std::to_string(dim));
    }
    if (vocab != glove.vocab().size()) {
      throw DataError("word vectors give vocabulary " + std::to_string(glove.vocab().size()) +
                      ", checkpoint expects " + std::to_string(vocab));
    }
    WordModel out{WordEncoder<float>(wc, glove, 0), std::nullopt, 0};
    if (!cfg.at("nli_hidden").is_null()) {
      out.hidden = cfg.at("nli_hidden").get<std::size_t>();
      Rng rng(0);
      out.head.emplace(dim, out.hidden, rng);
    }
    auto records = index_records(std::move(file.tensors));
    TensorSlots slots;
    slots.add_params(out.encoder.parameters());
    slots.add_stats(out.encoder.norm_stats());
    if (out.head) slots.add_params(out.head->parameters());
    restore(slots, records, cfg.at("norm_updates"));
    reject_leftovers(records);
    return out;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid checkpoint config: ") + e.what());
  }
}

}  // namespace recurseq
