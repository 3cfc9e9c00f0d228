#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "recurseq/model.hpp"
#include "recurseq/train.hpp"

namespace recurseq {

inline constexpr char kCheckpointMagic[4] = {'R', 'C', 'A', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Tensor<float> value;
};

/// Container layout: magic, u32 version, u64 config length, config JSON,
/// u32 record count, then records (u32 name length, name, u8 dtype, u32
/// rank, u64 dims, little-endian float32 data).
struct CheckpointFile {
  std::string config_json;
  std::vector<TensorRecord> tensors;
};

std::string encode_checkpoint(const CheckpointFile& file);
/// Throws DataError on bad magic, an unknown version or truncation.
CheckpointFile decode_checkpoint(std::string_view bytes);

std::string model_config_json(const ModelConfig& config);

/// Throws DataError naming each field that differs, e.g. "K: checkpoint 6,
/// config 7".
void check_model_config(const ModelConfig& saved, const ModelConfig& expected);

void save_autoencoder(const std::filesystem::path& path, Autoencoder<float>& model, const TrainConfig* train = nullptr,
                      const MomentumState<float>* optimizer = nullptr, int epoch = 0);

struct LoadedAutoencoder {
  Autoencoder<float> model;
  std::optional<TrainConfig> train;
  std::optional<MomentumState<float>> optimizer;
  int epoch = 0;
};

/// With `expected` set, the stored architecture must match it.
LoadedAutoencoder load_autoencoder(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

struct WordModel {
  WordEncoder<float> encoder;
  std::optional<NliHead<float>> head;
  std::size_t hidden = 0;
};

void save_word_model(const std::filesystem::path& path, WordModel& model, const TrainConfig* train = nullptr);
WordModel load_word_model(const std::filesystem::path& path, const GloveTable& glove);

}  // namespace recurseq
