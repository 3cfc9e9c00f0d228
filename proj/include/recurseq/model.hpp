#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "recurseq/nn.hpp"
#include "recurseq/padding.hpp"
#include "recurseq/word_vectors.hpp"

namespace recurseq {

/// Architecture hyperparameters shared by the byte- and word-level models.
struct ModelConfig {
  int N = 2;           // conv layers per group, even
  std::size_t d = 64;  // channels
  int K = 6;           // log2 of the padded length
  int r = 1;           // log2 of the latent length
  std::size_t vocab_size = kByteVocabSize;
  NormMode norm_mode = NormMode::kBatch;
  PaddingMode padding_mode = PaddingMode::kBalancedFixed;
  double norm_momentum = 0.1;

  void validate() const;
  std::size_t latent_size() const { return d << r; }
  std::size_t padded_length() const { return std::size_t{1} << K; }
  bool legacy() const { return padding_mode == PaddingMode::kRightNearest; }
};

std::string_view norm_mode_name(NormMode mode);
NormMode parse_norm_mode(std::string_view name);

/// Padded sequences stacked into one [B, 2^K] id matrix.
struct SequenceBatch {
  std::vector<PaddedSequence> seqs;
  std::vector<std::int32_t> ids;  // batch * length, row-major
  std::size_t length = 0;
  int exponent = 0;  // log2(length)

  std::size_t size() const { return seqs.size(); }
};

/// Stacks sequences of equal slot count. Throws std::invalid_argument otherwise.
SequenceBatch stack_sequences(std::vector<PaddedSequence> seqs);

/// One residual block's weights plus its normalization state per step key.
template <typename T>
struct Block {
  ResidualBlockParams<T> params;
  std::map<int, NormStats<T>> norm1;
  std::map<int, NormStats<T>> norm2;
};

/// Prefix group (run once) and weight-shared recursive group (run K-r times).
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  /// With `external` set the encoder reads that (typically frozen) table
  /// instead of owning a trainable one.
  Encoder(const ModelConfig& config, Rng& rng, const std::string& prefix, EmbeddingTable<T>* external = nullptr);

  Var<T> embed(Tape<T>& tape, const SequenceBatch& batch);
  /// embedded: [B, d, 2^e] -> latent [B, d, 2^r]
  Var<T> forward(const Var<T>& embedded, NormPhase phase, int exponent);

  EmbeddingTable<T>& embedding() { return external_ ? *external_ : own_embedding_; }
  const EmbeddingTable<T>& embedding() const { return external_ ? *external_ : own_embedding_; }
  std::vector<Block<T>>& prefix_blocks() { return prefix_; }
  std::vector<Block<T>>& recursive_blocks() { return recursive_; }

  void collect(std::vector<Parameter<T>*>& params, std::vector<NormStats<T>*>& stats);

 private:
  ModelConfig config_;
  EmbeddingTable<T> own_embedding_;
  EmbeddingTable<T>* external_ = nullptr;
  std::vector<Block<T>> prefix_;
  std::vector<Block<T>> recursive_;
};

/// Decoder recursive-group head: conv d->2d, expand, conv d->d, with the
/// input duplicated through the same expand as its residual skip.
template <typename T>
struct ExpandBlock {
  Conv1dParams<T> conv1;
  Conv1dParams<T> conv2;
  std::map<int, NormStats<T>> norm1;  // 2d channels
  std::map<int, NormStats<T>> norm2;  // d channels
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& config, Rng& rng, const std::string& prefix);

  /// latent [B, d, 2^r] -> logits [B, vocab, 2^e]
  Var<T> forward(const Var<T>& latent, NormPhase phase, int exponent);

  ExpandBlock<T>& expand_block() { return expand_; }
  std::vector<Block<T>>& recursive_blocks() { return recursive_; }
  std::vector<Block<T>>& postfix_blocks() { return postfix_; }
  Conv1dParams<T>& output() { return output_; }

  void collect(std::vector<Parameter<T>*>& params, std::vector<NormStats<T>*>& stats);

 private:
  ModelConfig config_;
  ExpandBlock<T> expand_;
  std::vector<Block<T>> recursive_;
  std::vector<Block<T>> postfix_;
  Conv1dParams<T> output_;
};

struct AutoencodeStats {
  double loss = 0.0;
  std::size_t real_tokens = 0;
  std::size_t wrong_tokens = 0;
  double byte_error() const { return real_tokens ? static_cast<double>(wrong_tokens) / real_tokens : 0.0; }
};

template <typename T>
struct AutoencodeResult {
  Var<T> logits;  // [B * 2^K, vocab]
  Var<T> loss;    // mean cross-entropy over every slot, PAD included
  std::vector<std::int32_t> predicted;  // argmax per slot
  AutoencodeStats stats;                // byte error over real slots only
};

/// Byte-level recursive convolutional auto-encoder.
template <typename T>
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const ModelConfig& config, std::uint64_t seed);
  Autoencoder(const Autoencoder&) = delete;
  Autoencoder& operator=(const Autoencoder&) = delete;
  Autoencoder(Autoencoder&&) = default;
  Autoencoder& operator=(Autoencoder&&) = default;

  const ModelConfig& config() const { return config_; }
  Encoder<T>& encoder() { return encoder_; }
  Decoder<T>& decoder() { return decoder_; }

  /// Recursive applications for a batch whose padded length is 2^exponent.
  int steps(int exponent) const { return exponent - config_.r; }

  Var<T> encode(Tape<T>& tape, const SequenceBatch& batch, NormPhase phase);
  /// logits [B * 2^e, vocab] from an already embedded input [B, d, 2^e].
  Var<T> logits_from_embedded(const Var<T>& embedded, NormPhase phase);
  AutoencodeResult<T> autoencode(Tape<T>& tape, const SequenceBatch& batch, NormPhase phase);
  AutoencodeResult<T> autoencode(Tape<T>& tape, const PaddedSequence& seq, NormPhase phase);

  /// Trainable parameters in a fixed order (frozen tables excluded).
  std::vector<Parameter<T>*> parameters();
  std::vector<NormStats<T>*> norm_stats();
  std::size_t parameter_count();

 private:
  ModelConfig config_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

/// Counts byte-error over real slots given predictions.
AutoencodeStats count_errors(const SequenceBatch& batch, std::span<const std::int32_t> predicted);

/// Closed-form count of trainable scalars for a byte-level model.
std::size_t param_count(const ModelConfig& config);

/// Word-level encoder settings. The recursive group runs K times so the
/// sentence vector has the word-vector width.
struct WordEncoderConfig {
  int N = 2;
  int K = 6;  // 64 slots
  NormMode norm_mode = NormMode::kBatch;
  double norm_momentum = 0.1;
  std::size_t max_words = 64;
};

/// Builds a frozen embedding table from word vectors, with zero PAD and UNK
/// rows appended.
template <typename T>
EmbeddingTable<T> make_word_embedding(const GloveTable& glove);

template <typename T>
class WordEncoder {
 public:
  WordEncoder() = default;
  WordEncoder(const WordEncoderConfig& config, const GloveTable& glove, std::uint64_t seed);
  WordEncoder(const WordEncoder&) = delete;
  WordEncoder& operator=(const WordEncoder&) = delete;
  WordEncoder(WordEncoder&&) = default;
  WordEncoder& operator=(WordEncoder&&) = default;

  const WordEncoderConfig& config() const { return config_; }
  const ModelConfig& model_config() const { return model_config_; }
  const WordVocab& vocab() const { return vocab_; }
  std::size_t dim() const { return model_config_.d; }

  /// Truncates to max_words, maps to ids and balanced-pads to 2^K slots.
  PaddedSequence prepare(const std::vector<std::string>& tokens) const;
  /// Sentence vectors [B, d_w].
  Var<T> forward(Tape<T>& tape, const std::vector<std::vector<std::string>>& sentences, NormPhase phase);

  std::vector<Parameter<T>*> parameters();
  std::vector<NormStats<T>*> norm_stats();
  Encoder<T>& encoder() { return *encoder_; }

 private:
  WordEncoderConfig config_;
  ModelConfig model_config_;
  WordVocab vocab_;
  std::unique_ptr<EmbeddingTable<T>> table_;  // stable address for the encoder
  std::unique_ptr<Encoder<T>> encoder_;
};

/// Mean of word vectors; unknown words add zero but still count.
template <typename T>
Tensor<T> bow_embed(const std::vector<std::string>& tokens, const GloveTable& glove, const WordVocab& vocab);

/// x = v + u, elementwise.
template <typename T>
Tensor<T> ensemble_embed(const Tensor<T>& v, const Tensor<T>& u);

/// Three fully connected layers over [v_p; v_h; |v_p - v_h|; v_p * v_h].
template <typename T>
class NliHead {
 public:
  static constexpr std::size_t kClasses = 3;  // entailment, contradiction, neutral

  NliHead() = default;
  NliHead(std::size_t dim, std::size_t hidden, Rng& rng);

  /// premise, hypothesis: [B, d] -> logits [B, 3]
  Var<T> forward(const Var<T>& premise, const Var<T>& hypothesis);
  std::vector<Parameter<T>*> parameters();

 private:
  Parameter<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

/// [v_p; v_h; |v_p - v_h|; v_p * v_h] along the feature axis.
template <typename T>
Var<T> nli_features(const Var<T>& premise, const Var<T>& hypothesis);

}  // namespace recurseq
