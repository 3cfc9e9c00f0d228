#include "recurseq/train.hpp"

#include <cmath>
#include <algorithm>
#include <array>
#include <istream>
#include <map>
#include <sstream>

namespace recurseq {

void TrainConfig::validate(const ModelConfig& model) const {
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
  if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (model.norm_mode == NormMode::kBatch && batch_size < 2) {
    throw std::invalid_argument("TrainConfig: batch normalization needs batch_size >= 2");
  }
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (samples_per_epoch < batch_size) throw std::invalid_argument("TrainConfig: samples_per_epoch < batch_size");
  if (min_len < 2 || min_len > max_len) throw std::invalid_argument("TrainConfig: need 2 <= min_len <= max_len");
  if (max_len > model.padded_length()) {
    throw std::invalid_argument("TrainConfig: max_len " + std::to_string(max_len) + " exceeds 2^K = " +
                                std::to_string(model.padded_length()));
  }
}

template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, MomentumState<T>& state, double lr, double momentum) {
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (auto* p : params) state.velocity.emplace_back(p->value.shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    Tensor<T>& v = state.velocity[i];
    if (v.shape() != p.value.shape()) throw std::invalid_argument("sgd: velocity shape mismatch for " + p.name);
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    const T mu = static_cast<T>(momentum), step = static_cast<T>(lr);
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = mu * v[j] + p.grad[j];
      p.value[j] -= step * v[j];
    }
    p.grad.fill(T{0});
  }
}

template <typename T>
double global_grad_norm(std::span<Parameter<T>* const> params) {
  double ss = 0.0;
  for (auto* p : params)
    for (T g : p->grad.data()) ss += static_cast<double>(g) * g;
  return std::sqrt(ss);
}

template <typename T>
double clip_global_norm(std::span<Parameter<T>* const> params, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("clip_global_norm: threshold must be positive");
  const double norm = global_grad_norm(params);
  if (!(norm > c)) return 1.0;
  const double factor = c / norm;
  for (auto* p : params)
    for (auto& g : p->grad.data()) g = static_cast<T>(g * factor);
  return factor;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 1) throw std::invalid_argument("lr_at_epoch: epochs count from 1");
  return cfg.lr * std::pow(cfg.lr_decay_factor, std::max(0, epoch - cfg.lr_decay_after_epoch));
}

std::string sample_random_string(Rng& rng, std::size_t lo, std::size_t hi) {
  if (lo < 1 || lo > hi) throw std::invalid_argument("sample_random_string: need 1 <= lo <= hi");
  const std::size_t len = lo + rng.below(hi - lo + 1);
  std::string s(len, ' ');
  for (auto& c : s) c = kRandomAlphabet[rng.below(kRandomAlphabet.size())];
  return s;
}

SequenceBatch make_batch(const std::vector<std::string>& texts, const ModelConfig& config) {
  if (texts.empty()) throw std::invalid_argument("make_batch: no texts");
  std::vector<PaddedSequence> seqs;
  seqs.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto ids = tokenize_bytes(texts[i]);
    if (ids.size() > config.padded_length()) {
      throw DataError("make_batch: text " + std::to_string(i) + " has " + std::to_string(ids.size()) +
                      " tokens, more than 2^K = " + std::to_string(config.padded_length()));
    }
    if (config.legacy()) {
      // Legacy padding never goes below the latent length.
      const int e = std::max(nearest_pow2(ids.size()), config.r);
      PaddedSequence p = pad_right(ids, e, false);
      p.k = nearest_pow2(ids.size());
      seqs.push_back(std::move(p));
    } else {
      seqs.push_back(pad_sequence(ids, config.K, config.padding_mode));
    }
  }
  if (config.legacy()) {
    for (std::size_t i = 1; i < seqs.size(); ++i) {
      if (seqs[i].ids.size() != seqs[0].ids.size()) {
        throw std::invalid_argument("make_batch: right_nearest padding gives lengths " +
                                    std::to_string(seqs[0].ids.size()) + " and " + std::to_string(seqs[i].ids.size()) +
                                    " in one batch");
      }
    }
  }
  return stack_sequences(std::move(seqs));
}

RandomStringSampler::RandomStringSampler(std::uint64_t seed, std::size_t min_len, std::size_t max_len)
    : rng_(seed), min_len_(min_len), max_len_(max_len) {
  if (min_len < 2 || min_len > max_len) throw std::invalid_argument("RandomStringSampler: need 2 <= min <= max");
}

std::string RandomStringSampler::next() { return sample_random_string(rng_, min_len_ - 1, max_len_ - 1); }

CorpusSampler::CorpusSampler(std::vector<std::string> lines, std::uint64_t seed)
    : lines_(std::move(lines)), rng_(seed) {
  if (lines_.empty()) throw DataError("CorpusSampler: empty corpus");
}

std::string CorpusSampler::next() { return lines_[rng_.below(lines_.size())]; }

std::string epoch_csv_header() { return "epoch,loss,byte_error,lr,clip_events"; }

std::string epoch_csv_line(const EpochStats& s) {
  std::ostringstream os;
  os.precision(9);
  os << s.epoch << ',' << s.loss << ',' << s.byte_error << ',' << s.lr << ',' << s.clip_events;
  return os.str();
}

template <typename T>
EpochStats train_epoch(Autoencoder<T>& model, TextSampler& sampler, const TrainConfig& cfg, int epoch,
                       MomentumState<T>& state) {
  cfg.validate(model.config());
  EpochStats st;
  st.epoch = epoch;
  st.lr = lr_at_epoch(cfg, epoch);
  const auto params = model.parameters();
  const std::size_t batches = cfg.samples_per_epoch / cfg.batch_size;
  double loss_sum = 0.0;
  std::size_t real = 0, wrong = 0;
  std::vector<std::string> texts(cfg.batch_size);
  for (std::size_t b = 0; b < batches; ++b) {
    for (auto& t : texts) t = sampler.next();
    const SequenceBatch batch = make_batch(texts, model.config());
    Tape<T> tape;
    auto res = model.autoencode(tape, batch, NormPhase::kTrain);
    if (!std::isfinite(res.stats.loss)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
    }
    tape.backward(res.loss);
    if (cfg.clip_norm) {
      const double norm = global_grad_norm<T>(params);
      if (!std::isfinite(norm)) {
        throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      if (clip_global_norm<T>(params, *cfg.clip_norm) < 1.0) ++st.clip_events;
    }
    sgd_momentum_step<T>(params, state, st.lr, cfg.momentum);
    loss_sum += res.stats.loss;
    real += res.stats.real_tokens;
    wrong += res.stats.wrong_tokens;
  }
  st.batches = batches;
  st.loss = loss_sum / static_cast<double>(batches);
  st.byte_error = real ? static_cast<double>(wrong) / real : 0.0;
  return st;
}

namespace {

SequenceBatch merge_batches(const std::vector<const SequenceBatch*>& group) {
  std::vector<PaddedSequence> all;
  for (const auto* b : group) all.insert(all.end(), b->seqs.begin(), b->seqs.end());
  return stack_sequences(std::move(all));
}

template <typename T>
class MomentumOverride {
 public:
  explicit MomentumOverride(std::vector<NormStats<T>*> stats) : stats_(std::move(stats)) {
    for (auto* s : stats_) {
      saved_.push_back(s->momentum);
      s->momentum = 1.0;
    }
  }
  ~MomentumOverride() {
    for (std::size_t i = 0; i < stats_.size(); ++i) stats_[i]->momentum = saved_[i];
  }

 private:
  std::vector<NormStats<T>*> stats_;
  std::vector<double> saved_;
};

}  // namespace

template <typename T>
void calibrate_bn(Autoencoder<T>& model, const std::vector<SequenceBatch>& batches) {
  if (batches.empty()) throw DataError("calibrate_bn: empty corpus");
  if (model.config().norm_mode != NormMode::kBatch) {
    throw std::invalid_argument("calibrate_bn: model does not use batch normalization");
  }
  // A train-mode pass with momentum 1 stores exactly the batch statistics.
  std::map<int, std::vector<const SequenceBatch*>> by_exponent;
  for (const auto& b : batches) by_exponent[b.exponent].push_back(&b);
  MomentumOverride<T> guard(model.norm_stats());
  for (const auto& [exponent, group] : by_exponent) {
    const SequenceBatch merged = merge_batches(group);
    Tape<T> tape(false);
    model.autoencode(tape, merged, NormPhase::kTrain);
  }
}

template <typename T>
void calibrate_bn(WordEncoder<T>& model, const std::vector<std::vector<std::string>>& sentences) {
  if (sentences.empty()) throw DataError("calibrate_bn: empty corpus");
  MomentumOverride<T> guard(model.norm_stats());
  Tape<T> tape(false);
  model.forward(tape, sentences, NormPhase::kTrain);
}

std::string LengthBucketReport::csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "lo,hi,n,error\n";
  for (const auto& b : buckets) {
    os << b.lo << ',' << b.hi << ',' << b.n << ',';
    if (b.n) os << b.error();
    os << '\n';
  }
  return os.str();
}

template <typename T>
AutoencodeStats evaluate(Autoencoder<T>& model, const std::vector<std::string>& corpus, std::size_t batch_size,
                         NormPhase phase) {
  AutoencodeStats total;
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  // Legacy mode needs batches of one padded length.
  std::map<std::size_t, std::vector<std::string>> groups;
  for (const auto& text : corpus) {
    const std::size_t key = model.config().legacy() ? std::size_t{1} << nearest_pow2(text.size() + 1) : 0;
    groups[key].push_back(text);
  }
  for (const auto& [key, texts] : groups) {
    for (std::size_t start = 0; start < texts.size(); start += batch_size) {
      const std::size_t end = std::min(texts.size(), start + batch_size);
      std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                     texts.begin() + static_cast<std::ptrdiff_t>(end));
      Tape<T> tape(false);
      const auto res = model.autoencode(tape, make_batch(chunk, model.config()), phase);
      total.real_tokens += res.stats.real_tokens;
      total.wrong_tokens += res.stats.wrong_tokens;
      total.loss += res.stats.loss * static_cast<double>(chunk.size());
    }
  }
  if (!corpus.empty()) total.loss /= static_cast<double>(corpus.size());
  return total;
}

template <typename T>
LengthBucketReport eval_byte_error_by_bucket(Autoencoder<T>& model, const std::vector<std::string>& corpus,
                                             const std::vector<std::pair<std::size_t, std::size_t>>& buckets,
                                             std::size_t batch_size, NormPhase phase) {
  LengthBucketReport report;
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    const auto [lo, hi] = buckets[i];
    if (lo > hi) throw std::invalid_argument("eval: bucket with lo > hi");
    for (std::size_t j = 0; j < i; ++j)
      if (!(hi < buckets[j].first || lo > buckets[j].second)) throw std::invalid_argument("eval: overlapping buckets");
    report.buckets.push_back({lo, hi, 0, 0, 0});
  }
  std::vector<std::vector<std::string>> members(buckets.size());
  for (const auto& text : corpus) {
    const std::size_t len = text.size() + 1;
    for (std::size_t i = 0; i < buckets.size(); ++i)
      if (len >= buckets[i].first && len <= buckets[i].second) {
        members[i].push_back(text);
        break;
      }
  }
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    if (members[i].empty()) continue;
    const AutoencodeStats st = evaluate(model, members[i], batch_size, phase);
    report.buckets[i].n = members[i].size();
    report.buckets[i].real_tokens = st.real_tokens;
    report.buckets[i].wrong_tokens = st.wrong_tokens;
  }
  return report;
}

std::span<const std::string_view> nli_label_names() {
  static constexpr std::array<std::string_view, 3> kNames = {"entailment", "contradiction", "neutral"};
  return kNames;
}

int parse_nli_label(std::string_view name) {
  const auto names = nli_label_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw DataError("unknown NLI label '" + std::string(name) + "'");
}

std::vector<NliExample> read_nli_corpus(std::istream& in) {
  std::vector<NliExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw DataError("NLI corpus line " + std::to_string(line_no) + ": expected premise<TAB>hypothesis<TAB>label");
    }
    NliExample ex;
    ex.premise = tokenize_words(line.substr(0, t1));
    ex.hypothesis = tokenize_words(line.substr(t1 + 1, t2 - t1 - 1));
    ex.label = parse_nli_label(line.substr(t2 + 1));
    if (ex.premise.empty() || ex.hypothesis.empty()) {
      throw DataError("NLI corpus line " + std::to_string(line_no) + ": empty sentence");
    }
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError("NLI corpus is empty");
  return out;
}

namespace {

template <typename T>
std::vector<std::int32_t> argmax_rows(const Tensor<T>& logits) {
  std::vector<std::int32_t> out(logits.dim(0));
  const std::size_t nv = logits.dim(1);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const T* row = logits.ptr() + p * nv;
    out[p] = static_cast<std::int32_t>(std::max_element(row, row + nv) - row);
  }
  return out;
}

}  // namespace

template <typename T>
EpochStats train_nli_epoch(WordEncoder<T>& encoder, NliHead<T>& head, const std::vector<NliExample>& data,
                           const TrainConfig& cfg, int epoch, MomentumState<T>& state, Rng& shuffle_rng) {
  if (data.empty()) throw DataError("train_nli_epoch: no examples");
  const bool needs_pairs = encoder.config().norm_mode == NormMode::kBatch;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

  std::vector<Parameter<T>*> params = encoder.parameters();
  for (auto* p : head.parameters()) params.push_back(p);

  EpochStats st;
  st.epoch = epoch;
  st.lr = lr_at_epoch(cfg, epoch);
  double loss_sum = 0.0;
  std::size_t seen = 0, wrong = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    if (needs_pairs && end - start < 2) break;  // batch statistics need two samples
    std::vector<std::vector<std::string>> premises, hypotheses;
    std::vector<std::int32_t> labels;
    for (std::size_t i = start; i < end; ++i) {
      const NliExample& ex = data[order[i]];
      premises.push_back(ex.premise);
      hypotheses.push_back(ex.hypothesis);
      labels.push_back(ex.label);
    }
    Tape<T> tape;
    const Var<T> vp = encoder.forward(tape, premises, NormPhase::kTrain);
    const Var<T> vh = encoder.forward(tape, hypotheses, NormPhase::kTrain);
    const Var<T> logits = head.forward(vp, vh);
    const Var<T> loss = softmax_xent(logits, labels);
    const double lv = static_cast<double>(loss.value().item());
    if (!std::isfinite(lv)) {
      throw NumericalError("non-finite NLI loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start));
    }
    tape.backward(loss);
    if (cfg.clip_norm && clip_global_norm<T>(params, *cfg.clip_norm) < 1.0) ++st.clip_events;
    sgd_momentum_step<T>(params, state, st.lr, cfg.momentum);
    const auto pred = argmax_rows(logits.value());
    for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i];
    loss_sum += lv * static_cast<double>(labels.size());
    seen += labels.size();
    ++st.batches;
  }
  if (seen == 0) throw DataError("train_nli_epoch: batch normalization needs at least two examples");
  st.loss = loss_sum / static_cast<double>(seen);
  st.byte_error = static_cast<double>(wrong) / static_cast<double>(seen);
  return st;
}

template <typename T>
double nli_accuracy(WordEncoder<T>& encoder, NliHead<T>& head, const std::vector<NliExample>& data,
                    std::size_t batch_size, NormPhase phase) {
  if (data.empty()) throw DataError("nli_accuracy: no examples");
  if (batch_size == 0) throw std::invalid_argument("nli_accuracy: batch_size must be positive");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<std::vector<std::string>> premises, hypotheses;
    std::vector<std::int32_t> labels;
    for (std::size_t i = start; i < end; ++i) {
      premises.push_back(data[i].premise);
      hypotheses.push_back(data[i].hypothesis);
      labels.push_back(data[i].label);
    }
    Tape<T> tape(false);
    const Var<T> logits = head.forward(encoder.forward(tape, premises, phase), encoder.forward(tape, hypotheses, phase));
    const auto pred = argmax_rows(logits.value());
    for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

#define RECURSEQ_INSTANTIATE(T)                                                                                     \
  template void sgd_momentum_step(std::span<Parameter<T>* const>, MomentumState<T>&, double, double);             \
  template double clip_global_norm(std::span<Parameter<T>* const>, double);                                        \
  template double global_grad_norm(std::span<Parameter<T>* const>);                                                \
  template EpochStats train_epoch(Autoencoder<T>&, TextSampler&, const TrainConfig&, int, MomentumState<T>&);      \
  template void calibrate_bn(Autoencoder<T>&, const std::vector<SequenceBatch>&);                                  \
  template void calibrate_bn(WordEncoder<T>&, const std::vector<std::vector<std::string>>&);                       \
  template AutoencodeStats evaluate(Autoencoder<T>&, const std::vector<std::string>&, std::size_t, NormPhase);     \
  template LengthBucketReport eval_byte_error_by_bucket(Autoencoder<T>&, const std::vector<std::string>&,          \
                                                        const std::vector<std::pair<std::size_t, std::size_t>>&, \
                                                        std::size_t, NormPhase);                        \
  template EpochStats train_nli_epoch(WordEncoder<T>&, NliHead<T>&, const std::vector<NliExample>&,              \
                                      const TrainConfig&, int, MomentumState<T>&, Rng&);                          \
  template double nli_accuracy(WordEncoder<T>&, NliHead<T>&, const std::vector<NliExample>&, std::size_t,         \
                               NormPhase);

RECURSEQ_INSTANTIATE(float)
RECURSEQ_INSTANTIATE(double)

#undef RECURSEQ_INSTANTIATE

}  // namespace recurseq
