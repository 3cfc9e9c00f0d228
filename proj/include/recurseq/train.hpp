#pragma once

#include <optional>
#include <string>
#include <vector>

#include "recurseq/model.hpp"

namespace recurseq {

struct TrainConfig {
  double lr = 0.5;
  double momentum = 0.5;
  std::optional<double> clip_norm = 1.0;
  std::size_t batch_size = 32;
  int epochs = 10;
  std::size_t samples_per_epoch = 20000;
  double lr_decay_factor = 0.1;
  int lr_decay_after_epoch = 10;
  std::uint64_t seed = 1;
  // Random-string sampler bounds, counted in tokens (bytes + EOS).
  std::size_t min_len = 4;
  std::size_t max_len = 32;

  void validate(const ModelConfig& model) const;
};

/// Velocity per parameter, zero until the first step.
template <typename T>
struct MomentumState {
  std::vector<Tensor<T>> velocity;
};

/// v <- momentum * v + g; theta <- theta - lr * v; then grads are zeroed.
template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, MomentumState<T>& state, double lr, double momentum);

/// Rescales all gradients so their joint L2 norm is at most c. Returns the
/// factor applied (1 when nothing was clipped).
template <typename T>
double clip_global_norm(std::span<Parameter<T>* const> params, double c);

template <typename T>
double global_grad_norm(std::span<Parameter<T>* const> params);

/// lr * factor^max(0, epoch - decay_after); epochs count from 1.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

inline constexpr std::string_view kRandomAlphabet =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

/// Uniform length in [lo, hi] characters, i.i.d. characters from a-zA-Z0-9.
std::string sample_random_string(Rng& rng, std::size_t lo, std::size_t hi);

/// Tokenizes and pads every text per the model's padding mode. Fixed modes
/// accept mixed lengths; the legacy nearest mode requires one padded length.
SequenceBatch make_batch(const std::vector<std::string>& texts, const ModelConfig& config);

class TextSampler {
 public:
  virtual ~TextSampler() = default;
  virtual std::string next() = 0;
};

/// Random alphanumeric strings whose token length (with EOS) is uniform in
/// [min_len, max_len].
class RandomStringSampler : public TextSampler {
 public:
  RandomStringSampler(std::uint64_t seed, std::size_t min_len, std::size_t max_len);
  std::string next() override;

 private:
  Rng rng_;
  std::size_t min_len_, max_len_;
};

/// Uniformly random lines of a fixed corpus.
class CorpusSampler : public TextSampler {
 public:
  CorpusSampler(std::vector<std::string> lines, std::uint64_t seed);
  std::string next() override;

 private:
  std::vector<std::string> lines_;
  Rng rng_;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double byte_error = 0.0;
  double lr = 0.0;
  std::size_t clip_events = 0;
  std::size_t batches = 0;
};

std::string epoch_csv_header();
std::string epoch_csv_line(const EpochStats& s);

/// One optimizer step per batch of samples_per_epoch / batch_size batches.
/// Throws NumericalError when the loss stops being finite.
template <typename T>
EpochStats train_epoch(Autoencoder<T>& model, TextSampler& sampler, const TrainConfig& cfg, int epoch,
                       MomentumState<T>& state);

/// Replaces every running mean/variance with the exact population
/// statistics of the given batches (all batches are evaluated as one).
template <typename T>
void calibrate_bn(Autoencoder<T>& model, const std::vector<SequenceBatch>& batches);

template <typename T>
void calibrate_bn(WordEncoder<T>& model, const std::vector<std::vector<std::string>>& sentences);

struct LengthBucket {
  std::size_t lo = 0;  // inclusive, tokens
  std::size_t hi = 0;  // inclusive, tokens
  std::size_t n = 0;
  std::size_t real_tokens = 0;
  std::size_t wrong_tokens = 0;

  double error() const { return real_tokens ? static_cast<double>(wrong_tokens) / real_tokens : 0.0; }
};

struct LengthBucketReport {
  std::vector<LengthBucket> buckets;

  std::string csv() const;  // lo,hi,n,error; error left empty for n == 0
};

/// Texts are bucketed by token length (bytes + EOS); texts outside every
/// bucket are ignored. Buckets must not overlap.
template <typename T>
LengthBucketReport eval_byte_error_by_bucket(Autoencoder<T>& model, const std::vector<std::string>& corpus,
                                             const std::vector<std::pair<std::size_t, std::size_t>>& buckets,
                                             std::size_t batch_size = 64, NormPhase phase = NormPhase::kInfer);

/// Byte error over a whole corpus.
template <typename T>
AutoencodeStats evaluate(Autoencoder<T>& model, const std::vector<std::string>& corpus, std::size_t batch_size = 64,
                         NormPhase phase = NormPhase::kInfer);

/// One labelled sentence pair, already tokenized.
struct NliExample {
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  int label = 0;  // index into nli_label_names()
};

std::span<const std::string_view> nli_label_names();
int parse_nli_label(std::string_view name);

/// Lines of premise<TAB>hypothesis<TAB>label.
std::vector<NliExample> read_nli_corpus(std::istream& in);

/// One pass over the examples in a shuffled order, updating the encoder and
/// the head together. The byte_error field holds the classification error.
template <typename T>
EpochStats train_nli_epoch(WordEncoder<T>& encoder, NliHead<T>& head, const std::vector<NliExample>& data,
                           const TrainConfig& cfg, int epoch, MomentumState<T>& state, Rng& shuffle_rng);

template <typename T>
double nli_accuracy(WordEncoder<T>& encoder, NliHead<T>& head, const std::vector<NliExample>& data,
                    std::size_t batch_size = 64, NormPhase phase = NormPhase::kInfer);

}  // namespace recurseq
