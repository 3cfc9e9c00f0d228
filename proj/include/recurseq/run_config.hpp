#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "recurseq/model.hpp"
#include "recurseq/retrieval.hpp"
#include "recurseq/train.hpp"

namespace recurseq {

/// Bad command line or configuration; maps to exit code 1.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Task { kAutoencoder, kNli };
enum class EmbedderKind { kBow, kEncoder, kEnsemble, kByte };

std::string_view embedder_name(EmbedderKind k);

/// Everything a command needs, read from a flat key=value file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Task task = Task::kAutoencoder;

  std::string train_corpus;  // empty: random strings
  std::string eval_corpus;   // empty: random strings
  std::string eval_buckets = "4-8,9-16,17-32,33-64";
  std::size_t eval_samples = 1000;
  std::size_t eval_batch_size = 64;
  std::size_t calibrate_samples = 0;  // BN calibration after training, 0 keeps running averages

  std::string glove;
  EmbedderKind embedder = EmbedderKind::kBow;
  WordEncoderConfig word;
  std::size_t nli_hidden = 512;

  std::string quotes;
  bool paired = false;
  MatchStrategy strategy = MatchStrategy::kMatchResponse;
  std::size_t top_k = 1;

  int ig_steps = 50;
  std::string heatmap_format = "pgm";

  /// Applies one key=value pair; unknown keys and bad values throw UsageError.
  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::size_t, std::size_t>> buckets() const;
  void validate() const;
};

/// Lines of key=value; blank lines and lines starting with # are ignored.
RunConfig parse_run_config(std::istream& in, const std::string& source = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// "key=value" as given on the command line.
void apply_override(RunConfig& cfg, const std::string& assignment);

std::vector<std::string> run_config_keys();

}  // namespace recurseq
