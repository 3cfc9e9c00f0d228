#include "recurseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace recurseq {

void ModelConfig::validate() const {
  if (N < 2 || N % 2 != 0) throw std::invalid_argument("ModelConfig: N must be even and >= 2, got " + std::to_string(N));
  if (d == 0) throw std::invalid_argument("ModelConfig: d must be positive");
  if (K < 1 || K > 20) throw std::invalid_argument("ModelConfig: K out of range");
  if (r < 0 || r >= K) throw std::invalid_argument("ModelConfig: need 0 <= r < K");
  if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
  if (!(norm_momentum > 0.0 && norm_momentum <= 1.0)) throw std::invalid_argument("ModelConfig: momentum in (0,1]");
}

std::string_view norm_mode_name(NormMode mode) {
  switch (mode) {
    case NormMode::kBatch:
      return "batch";
    case NormMode::kInstance:
      return "instance";
    case NormMode::kNone:
      return "none";
  }
  return "?";
}

NormMode parse_norm_mode(std::string_view name) {
  if (name == "batch") return NormMode::kBatch;
  if (name == "instance") return NormMode::kInstance;
  if (name == "none") return NormMode::kNone;
  throw std::invalid_argument("unknown norm mode '" + std::string(name) + "'");
}

SequenceBatch stack_sequences(std::vector<PaddedSequence> seqs) {
  if (seqs.empty()) throw std::invalid_argument("stack_sequences: empty batch");
  SequenceBatch batch;
  batch.length = seqs.front().ids.size();
  batch.exponent = seqs.front().K;
  batch.ids.reserve(batch.length * seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].ids.size() != batch.length) {
      throw std::invalid_argument("stack_sequences: sequence " + std::to_string(i) + " has " +
                                  std::to_string(seqs[i].ids.size()) + " slots, expected " +
                                  std::to_string(batch.length));
    }
    batch.ids.insert(batch.ids.end(), seqs[i].ids.begin(), seqs[i].ids.end());
  }
  batch.seqs = std::move(seqs);
  return batch;
}

namespace {

constexpr int kExponentStride = 64;

// Fixed-length modes share one layout, so statistics are keyed by step only.
// The legacy variable-length mode also keys by padded exponent.
int step_key(const ModelConfig& c, int exponent, int step) {
  return c.legacy() ? exponent * kExponentStride + step : step;
}

std::vector<int> once_keys(const ModelConfig& c) {
  if (!c.legacy()) return {0};
  std::vector<int> keys;
  for (int e = c.r; e <= c.K; ++e) keys.push_back(step_key(c, e, 0));
  return keys;
}

std::vector<int> recursive_keys(const ModelConfig& c) {
  std::vector<int> keys;
  if (!c.legacy()) {
    for (int s = 0; s < c.K - c.r; ++s) keys.push_back(s);
    return keys;
  }
  for (int e = c.r; e <= c.K; ++e)
    for (int s = 0; s < e - c.r; ++s) keys.push_back(step_key(c, e, s));
  return keys;
}

template <typename T>
std::map<int, NormStats<T>> make_norms(const ModelConfig& c, const std::string& name, std::size_t channels,
                                       const std::vector<int>& keys) {
  std::map<int, NormStats<T>> out;
  for (int key : keys)
    out.emplace(key, NormStats<T>(name + ".k" + std::to_string(key), channels, key, c.norm_momentum));
  return out;
}

template <typename T>
Block<T> make_block(const ModelConfig& c, Rng& rng, const std::string& name, const std::vector<int>& keys) {
  Block<T> b;
  b.params.conv1 = make_conv1d<T>(name + ".conv1", c.d, c.d, 3, rng);
  b.params.conv2 = make_conv1d<T>(name + ".conv2", c.d, c.d, 3, rng);
  b.norm1 = make_norms<T>(c, name + ".norm1", c.d, keys);
  b.norm2 = make_norms<T>(c, name + ".norm2", c.d, keys);
  return b;
}

template <typename T>
NormStats<T>& stats_at(std::map<int, NormStats<T>>& bank, int key) {
  auto it = bank.find(key);
  if (it == bank.end()) throw std::invalid_argument("no normalization statistics for step key " + std::to_string(key));
  return it->second;
}

template <typename T>
Var<T> run_block(const Var<T>& x, Block<T>& b, int key, const ModelConfig& c, NormPhase phase) {
  return residual_block(x, b.params, stats_at(b.norm1, key), stats_at(b.norm2, key), c.norm_mode, phase);
}

template <typename T>
void collect_conv(Conv1dParams<T>& p, std::vector<Parameter<T>*>& params) {
  params.push_back(&p.weight);
  params.push_back(&p.bias);
}

template <typename T>
void collect_norms(std::map<int, NormStats<T>>& bank, const ModelConfig& c, std::vector<Parameter<T>*>& params,
                   std::vector<NormStats<T>*>& stats) {
  for (auto& [key, s] : bank) {
    if (c.norm_mode != NormMode::kNone) {
      params.push_back(&s.gamma);
      params.push_back(&s.beta);
    }
    stats.push_back(&s);
  }
}

template <typename T>
void collect_block(Block<T>& b, const ModelConfig& c, std::vector<Parameter<T>*>& params,
                   std::vector<NormStats<T>*>& stats) {
  collect_conv(b.params.conv1, params);
  collect_norms(b.norm1, c, params, stats);
  collect_conv(b.params.conv2, params);
  collect_norms(b.norm2, c, params, stats);
}

}  // namespace

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, Rng& rng, const std::string& prefix, EmbeddingTable<T>* external)
    : config_(config), external_(external) {
  config_.validate();
  if (external_) {
    if (external_->dim() != config_.d) throw std::invalid_argument("Encoder: embedding width differs from d");
  } else {
    own_embedding_.vectors = Parameter<T>(prefix + ".embedding",
                                          tensor_new<T>({config_.vocab_size, config_.d}, fill::Normal{0.0, 1.0}, &rng));
  }
  const auto once = once_keys(config_);
  const auto rec = recursive_keys(config_);
  for (int i = 0; i < config_.N / 2; ++i)
    prefix_.push_back(make_block<T>(config_, rng, prefix + ".prefix." + std::to_string(i), once));
  for (int i = 0; i < config_.N / 2; ++i)
    recursive_.push_back(make_block<T>(config_, rng, prefix + ".recursive." + std::to_string(i), rec));
}

template <typename T>
Var<T> Encoder<T>::embed(Tape<T>& tape, const SequenceBatch& batch) {
  return embedding_lookup(tape, embedding(), batch.ids, batch.size());
}

template <typename T>
Var<T> Encoder<T>::forward(const Var<T>& embedded, NormPhase phase, int exponent) {
  if (embedded.rank() != 3 || embedded.dim(1) != config_.d || embedded.dim(2) != (std::size_t{1} << exponent)) {
    throw std::invalid_argument("Encoder: expected [B," + std::to_string(config_.d) + ",2^" +
                                std::to_string(exponent) + "], got " + shape_str(embedded.shape()));
  }
  if (!config_.legacy() && exponent != config_.K) {
    throw std::invalid_argument("Encoder: padded length 2^" + std::to_string(exponent) + " but model expects 2^" +
                                std::to_string(config_.K));
  }
  if (exponent < config_.r || exponent > config_.K) throw std::invalid_argument("Encoder: exponent out of range");
  Var<T> h = embedded;
  const int once = step_key(config_, exponent, 0);
  for (auto& b : prefix_) h = run_block(h, b, once, config_, phase);
  for (int s = 0; s < exponent - config_.r; ++s) {
    const int key = step_key(config_, exponent, s);
    for (auto& b : recursive_) h = run_block(h, b, key, config_, phase);
    h = maxpool1d(h);
  }
  return h;
}

template <typename T>
void Encoder<T>::collect(std::vector<Parameter<T>*>& params, std::vector<NormStats<T>*>& stats) {
  if (!embedding().frozen) params.push_back(&embedding().vectors);
  for (auto& b : prefix_) collect_block(b, config_, params, stats);
  for (auto& b : recursive_) collect_block(b, config_, params, stats);
}

template <typename T>
Decoder<T>::Decoder(const ModelConfig& config, Rng& rng, const std::string& prefix) : config_(config) {
  config_.validate();
  const auto once = once_keys(config_);
  const auto rec = recursive_keys(config_);
  const std::string head = prefix + ".recursive.expand";
  expand_.conv1 = make_conv1d<T>(head + ".conv1", config_.d, 2 * config_.d, 3, rng);
  expand_.conv2 = make_conv1d<T>(head + ".conv2", config_.d, config_.d, 3, rng);
  expand_.norm1 = make_norms<T>(config_, head + ".norm1", 2 * config_.d, rec);
  expand_.norm2 = make_norms<T>(config_, head + ".norm2", config_.d, rec);
  for (int i = 1; i < config_.N / 2; ++i)
    recursive_.push_back(make_block<T>(config_, rng, prefix + ".recursive." + std::to_string(i), rec));
  for (int i = 0; i < config_.N / 2; ++i)
    postfix_.push_back(make_block<T>(config_, rng, prefix + ".postfix." + std::to_string(i), once));
  output_ = make_conv1d<T>(prefix + ".output", config_.d, config_.vocab_size, 1, rng);
}

template <typename T>
Var<T> Decoder<T>::forward(const Var<T>& latent, NormPhase phase, int exponent) {
  const std::size_t latent_len = std::size_t{1} << config_.r;
  if (latent.rank() != 3 || latent.dim(1) != config_.d || latent.dim(2) != latent_len) {
    throw std::invalid_argument("Decoder: expected latent [B," + std::to_string(config_.d) + "," +
                                std::to_string(latent_len) + "], got " + shape_str(latent.shape()));
  }
  if (exponent < config_.r || exponent > config_.K) throw std::invalid_argument("Decoder: exponent out of range");
  Var<T> h = latent;
  for (int s = 0; s < exponent - config_.r; ++s) {
    const int key = step_key(config_, exponent, s);
    Var<T> a = relu(normalize(conv1d(h, expand_.conv1), stats_at(expand_.norm1, key), config_.norm_mode, phase));
    a = expand1d(a);
    a = normalize(conv1d(a, expand_.conv2), stats_at(expand_.norm2, key), config_.norm_mode, phase);
    h = relu(add(a, expand1d(concat_channels(h, h))));
    for (auto& b : recursive_) h = run_block(h, b, key, config_, phase);
  }
  const int once = step_key(config_, exponent, 0);
  for (auto& b : postfix_) h = run_block(h, b, once, config_, phase);
  return conv1d(h, output_);
}

template <typename T>
void Decoder<T>::collect(std::vector<Parameter<T>*>& params, std::vector<NormStats<T>*>& stats) {
  collect_conv(expand_.conv1, params);
  collect_norms(expand_.norm1, config_, params, stats);
  collect_conv(expand_.conv2, params);
  collect_norms(expand_.norm2, config_, params, stats);
  for (auto& b : recursive_) collect_block(b, config_, params, stats);
  for (auto& b : postfix_) collect_block(b, config_, params, stats);
  collect_conv(output_, params);
}

template <typename T>
Autoencoder<T>::Autoencoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  encoder_ = Encoder<T>(config_, rng, "encoder");
  decoder_ = Decoder<T>(config_, rng, "decoder");
}

template <typename T>
Var<T> Autoencoder<T>::encode(Tape<T>& tape, const SequenceBatch& batch, NormPhase phase) {
  return encoder_.forward(encoder_.embed(tape, batch), phase, batch.exponent);
}

template <typename T>
Var<T> Autoencoder<T>::logits_from_embedded(const Var<T>& embedded, NormPhase phase) {
  const std::size_t len = embedded.dim(2);
  const int exponent = nearest_pow2(len);
  if ((std::size_t{1} << exponent) != len) throw std::invalid_argument("logits: length is not a power of two");
  Var<T> latent = encoder_.forward(embedded, phase, exponent);
  return to_positions(decoder_.forward(latent, phase, exponent));
}

AutoencodeStats count_errors(const SequenceBatch& batch, std::span<const std::int32_t> predicted) {
  AutoencodeStats st;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch.seqs[b];
    for (std::size_t i = 0; i < seq.positions.size(); ++i) {
      const std::size_t slot = b * batch.length + seq.positions[i];
      ++st.real_tokens;
      if (predicted[slot] != batch.ids[slot]) ++st.wrong_tokens;
    }
  }
  return st;
}

template <typename T>
AutoencodeResult<T> Autoencoder<T>::autoencode(Tape<T>& tape, const SequenceBatch& batch, NormPhase phase) {
  AutoencodeResult<T> res;
  res.logits = logits_from_embedded(encoder_.embed(tape, batch), phase);
  res.loss = softmax_xent(res.logits, batch.ids);
  res.stats.loss = static_cast<double>(res.loss.value().item());
  const Tensor<T>& lg = res.logits.value();
  const std::size_t rows = lg.dim(0), nv = lg.dim(1);
  res.predicted.resize(rows);
  for (std::size_t p = 0; p < rows; ++p) {
    const T* row = lg.ptr() + p * nv;
    res.predicted[p] = static_cast<std::int32_t>(std::max_element(row, row + nv) - row);
  }
  const AutoencodeStats counts = count_errors(batch, res.predicted);
  res.stats.real_tokens = counts.real_tokens;
  res.stats.wrong_tokens = counts.wrong_tokens;
  return res;
}

template <typename T>
AutoencodeResult<T> Autoencoder<T>::autoencode(Tape<T>& tape, const PaddedSequence& seq, NormPhase phase) {
  return autoencode(tape, stack_sequences({seq}), phase);
}

template <typename T>
std::vector<Parameter<T>*> Autoencoder<T>::parameters() {
  std::vector<Parameter<T>*> params;
  std::vector<NormStats<T>*> stats;
  encoder_.collect(params, stats);
  decoder_.collect(params, stats);
  return params;
}

template <typename T>
std::vector<NormStats<T>*> Autoencoder<T>::norm_stats() {
  std::vector<Parameter<T>*> params;
  std::vector<NormStats<T>*> stats;
  encoder_.collect(params, stats);
  decoder_.collect(params, stats);
  return stats;
}

template <typename T>
std::size_t Autoencoder<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

std::size_t param_count(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d, blocks = static_cast<std::size_t>(c.N / 2);
  const std::size_t once = once_keys(c).size(), rec = recursive_keys(c).size();
  const std::size_t norm = c.norm_mode == NormMode::kNone ? 0 : 2;  // gamma + beta per channel
  const auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k + out; };
  const std::size_t std_block = 2 * conv(d, d, 3);
  std::size_t n = c.vocab_size * d;
  // Encoder prefix and recursive groups.
  n += blocks * (std_block + 2 * norm * d * once);
  n += blocks * (std_block + 2 * norm * d * rec);
  // Decoder recursive group: expand block then the remaining blocks.
  n += conv(d, 2 * d, 3) + conv(d, d, 3) + norm * (2 * d + d) * rec;
  n += (blocks - 1) * (std_block + 2 * norm * d * rec);
  // Postfix group and kernel-1 output projection.
  n += blocks * (std_block + 2 * norm * d * once);
  n += conv(d, c.vocab_size, 1);
  return n;
}

template <typename T>
EmbeddingTable<T> make_word_embedding(const GloveTable& glove) {
  if (glove.size() == 0 || glove.dim == 0) throw std::invalid_argument("make_word_embedding: empty word vectors");
  Tensor<T> table({glove.size() + 2, glove.dim});
  for (std::size_t i = 0; i < glove.vectors.size(); ++i) table[i] = static_cast<T>(glove.vectors[i]);
  EmbeddingTable<T> out;
  out.vectors = Parameter<T>("word_embedding", std::move(table));
  out.vectors.grad = Tensor<T>();
  out.frozen = true;
  return out;
}

template <typename T>
WordEncoder<T>::WordEncoder(const WordEncoderConfig& config, const GloveTable& glove, std::uint64_t seed)
    : config_(config), vocab_(glove.vocab()) {
  if (config_.max_words == 0 || config_.max_words > (std::size_t{1} << config_.K)) {
    throw std::invalid_argument("WordEncoder: max_words must be in [1, 2^K]");
  }
  model_config_.N = config_.N;
  model_config_.d = glove.dim;
  model_config_.K = config_.K;
  model_config_.r = 0;
  model_config_.vocab_size = vocab_.size();
  model_config_.norm_mode = config_.norm_mode;
  model_config_.norm_momentum = config_.norm_momentum;
  model_config_.padding_mode = PaddingMode::kBalancedFixed;
  table_ = std::make_unique<EmbeddingTable<T>>(make_word_embedding<T>(glove));
  Rng rng(seed);
  encoder_ = std::make_unique<Encoder<T>>(model_config_, rng, "word_encoder", table_.get());
}

template <typename T>
PaddedSequence WordEncoder<T>::prepare(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("word encoder: empty sentence");
  const std::size_t n = std::min(tokens.size(), config_.max_words);
  std::vector<std::string> kept(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));
  return pad_balanced(vocab_.encode(kept), config_.K, vocab_.pad_id());
}

template <typename T>
Var<T> WordEncoder<T>::forward(Tape<T>& tape, const std::vector<std::vector<std::string>>& sentences,
                               NormPhase phase) {
  std::vector<PaddedSequence> seqs;
  seqs.reserve(sentences.size());
  for (const auto& s : sentences) seqs.push_back(prepare(s));
  const SequenceBatch batch = stack_sequences(std::move(seqs));
  Var<T> latent = encoder_->forward(encoder_->embed(tape, batch), phase, config_.K);
  return reshape(latent, {batch.size(), dim()});
}

template <typename T>
std::vector<Parameter<T>*> WordEncoder<T>::parameters() {
  std::vector<Parameter<T>*> params;
  std::vector<NormStats<T>*> stats;
  encoder_->collect(params, stats);
  return params;
}

template <typename T>
std::vector<NormStats<T>*> WordEncoder<T>::norm_stats() {
  std::vector<Parameter<T>*> params;
  std::vector<NormStats<T>*> stats;
  encoder_->collect(params, stats);
  return stats;
}

template <typename T>
Tensor<T> bow_embed(const std::vector<std::string>& tokens, const GloveTable& glove, const WordVocab& vocab) {
  if (tokens.empty()) throw std::invalid_argument("bow_embed: empty sentence");
  std::vector<double> acc(glove.dim, 0.0);
  for (const auto& t : tokens) {
    const std::int32_t id = vocab.id(t);
    if (id >= static_cast<std::int32_t>(glove.size())) continue;
    const auto row = glove.row(static_cast<std::size_t>(id));
    for (std::size_t c = 0; c < glove.dim; ++c) acc[c] += row[c];
  }
  Tensor<T> out({glove.dim});
  for (std::size_t c = 0; c < glove.dim; ++c) out[c] = static_cast<T>(acc[c] / static_cast<double>(tokens.size()));
  return out;
}

template <typename T>
Tensor<T> ensemble_embed(const Tensor<T>& v, const Tensor<T>& u) {
  if (v.shape() != u.shape()) {
    throw std::invalid_argument("ensemble_embed: dimension mismatch " + shape_str(v.shape()) + " vs " +
                                shape_str(u.shape()));
  }
  Tensor<T> out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += u[i];
  return out;
}

namespace {

template <typename T>
Parameter<T> uniform_param(const std::string& name, const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Parameter<T>(name, tensor_new<T>(shape, fill::Uniform{-bound, bound}, &rng));
}

}  // namespace

template <typename T>
NliHead<T>::NliHead(std::size_t dim, std::size_t hidden, Rng& rng)
    : w1_(uniform_param<T>("nli.fc1.weight", {hidden, 4 * dim}, 4 * dim, rng)),
      b1_(uniform_param<T>("nli.fc1.bias", {hidden}, 4 * dim, rng)),
      w2_(uniform_param<T>("nli.fc2.weight", {hidden, hidden}, hidden, rng)),
      b2_(uniform_param<T>("nli.fc2.bias", {hidden}, hidden, rng)),
      w3_(uniform_param<T>("nli.fc3.weight", {kClasses, hidden}, hidden, rng)),
      b3_(uniform_param<T>("nli.fc3.bias", {kClasses}, hidden, rng)) {}

template <typename T>
Var<T> nli_features(const Var<T>& premise, const Var<T>& hypothesis) {
  if (premise.shape() != hypothesis.shape()) {
    throw std::invalid_argument("nli_features: embedding shapes differ " + shape_str(premise.shape()) + " vs " +
                                shape_str(hypothesis.shape()));
  }
  const std::size_t axis = premise.rank() - 1;
  Var<T> left = concat(premise, hypothesis, axis);
  Var<T> right = concat(abs(sub(premise, hypothesis)), mul(premise, hypothesis), axis);
  return concat(left, right, axis);
}

template <typename T>
Var<T> NliHead<T>::forward(const Var<T>& premise, const Var<T>& hypothesis) {
  Tape<T>& tape = premise.tape();
  Var<T> h = nli_features(premise, hypothesis);
  h = relu(linear(h, tape.param(w1_), tape.param(b1_)));
  h = relu(linear(h, tape.param(w2_), tape.param(b2_)));
  return linear(h, tape.param(w3_), tape.param(b3_));
}

template <typename T>
std::vector<Parameter<T>*> NliHead<T>::parameters() {
  return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
}

#define RECURSEQ_INSTANTIATE(T)                                                                         \
  template class Encoder<T>;                                                                            \
  template class Decoder<T>;                                                                            \
  template class Autoencoder<T>;                                                                        \
  template EmbeddingTable<T> make_word_embedding(const GloveTable&);                                    \
  template class WordEncoder<T>;                                                                        \
  template Tensor<T> bow_embed(const std::vector<std::string>&, const GloveTable&, const WordVocab&);   \
  template Tensor<T> ensemble_embed(const Tensor<T>&, const Tensor<T>&);                                \
  template class NliHead<T>;                                                                            \
  template Var<T> nli_features(const Var<T>&, const Var<T>&);

RECURSEQ_INSTANTIATE(float)
RECURSEQ_INSTANTIATE(double)

#undef RECURSEQ_INSTANTIATE

}  // namespace recurseq
