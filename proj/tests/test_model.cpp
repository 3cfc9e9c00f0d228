#include <set>
#include <stdexcept>

#include "doctest.h"
#include "recurseq/model.hpp"
#include "support/grad_suite.hpp"

using namespace recurseq;

namespace {

ModelConfig tiny(NormMode norm = NormMode::kBatch) {
  ModelConfig c;
  c.N = 2;
  c.d = 4;
  c.K = 4;
  c.r = 1;
  c.norm_mode = norm;
  return c;
}

SequenceBatch batch_of(const std::vector<std::string>& texts, const ModelConfig& c) {
  std::vector<PaddedSequence> seqs;
  for (const auto& t : texts) seqs.push_back(pad_sequence(tokenize_bytes(t), c.K, c.padding_mode));
  return stack_sequences(std::move(seqs));
}

GloveTable tiny_glove() {
  GloveTable g;
  g.dim = 2;
  g.words = {"red", "blue", "cat"};
  g.vectors = {1, 0, 0, 1, 2, 2};
  return g;
}

}  // namespace

TEST_CASE("latent and logits shapes") {
  for (auto [d, K, r] : {std::tuple{256, 10, 2}, std::tuple{32, 6, 1}}) {
    ModelConfig c;
    c.d = static_cast<std::size_t>(d);
    c.K = K;
    c.r = r;
    c.norm_mode = NormMode::kNone;
    CHECK(c.latent_size() == static_cast<std::size_t>(d) << r);
    if (d == 256) {
      CHECK(c.latent_size() == 1024);
      continue;  // shape arithmetic only; the full model is exercised at desk scale
    }
    Autoencoder<float> model(c, 1);
    CHECK(model.steps(K) == K - r);
    Tape<float> tape(false);
    const auto batch = batch_of({"ab", "hello"}, c);
    CHECK(model.encode(tape, batch, NormPhase::kTrain).shape() == Shape{2, c.d, 2});
    const auto res = model.autoencode(tape, batch, NormPhase::kTrain);
    CHECK(res.logits.shape() == Shape{2 * 64, kByteVocabSize});
    CHECK(res.predicted.size() == 128);
  }
}

TEST_CASE("parameter count closed form") {
  ModelConfig c;
  c.N = 2;
  c.d = 2;
  c.K = 2;
  c.r = 1;
  c.vocab_size = 4;
  c.norm_mode = NormMode::kNone;
  // embedding 8, four standard blocks of 28, expand convs 28 + 14, output 12
  CHECK(param_count(c) == 146);
  c.norm_mode = NormMode::kBatch;
  // gamma and beta: 8 per standard block, 12 for the expand block (4 + 2 channels)
  CHECK(param_count(c) == 182);

  for (auto norm : {NormMode::kNone, NormMode::kBatch, NormMode::kInstance}) {
    for (int N : {2, 4}) {
      ModelConfig m = tiny(norm);
      m.N = N;
      Autoencoder<float> model(m, 1);
      CHECK(model.parameter_count() == param_count(m));
    }
  }
  ModelConfig paper;
  paper.N = 8;
  paper.d = 256;
  paper.K = 10;
  paper.r = 2;
  CHECK(param_count(paper) == 6706690);
  CHECK_THROWS_AS(param_count(ModelConfig{3}), std::invalid_argument);
}

TEST_CASE("doubling N doubles the convolution parameters") {
  ModelConfig a = tiny(NormMode::kNone);
  a.vocab_size = 2;
  ModelConfig b = a;
  b.N = 4;
  const std::size_t fixed = a.vocab_size * a.d + a.vocab_size * a.d + a.vocab_size;  // embedding, output
  const std::size_t extra_expand = (2 * a.d * a.d * 3 + 2 * a.d) - (a.d * a.d * 3 + a.d);
  CHECK(param_count(b) - fixed - extra_expand == 2 * (param_count(a) - fixed - extra_expand));
}

TEST_CASE("recursive weights are shared and statistics are per step") {
  ModelConfig c = tiny();
  Autoencoder<double> model(c, 7);
  auto& block = model.encoder().recursive_blocks().at(0);
  REQUIRE(block.norm1.size() == static_cast<std::size_t>(c.K - c.r));
  std::set<const void*> addresses;
  for (auto& [key, s] : block.norm1) addresses.insert(&s.running_mean);
  CHECK(addresses.size() == block.norm1.size());

  Tape<double> tape(false);
  const auto batch = batch_of({"abc", "hello world", "x"}, c);
  model.autoencode(tape, batch, NormPhase::kTrain);
  CHECK(block.norm1.at(0).running_mean.storage() != block.norm1.at(1).running_mean.storage());
  for (auto& [key, s] : block.norm1) CHECK(s.updates == 1);

  // Each shared parameter appears once in the parameter list.
  std::set<const void*> params;
  for (auto* p : model.parameters()) CHECK(params.insert(p).second);

  // Zeroing the shared weight changes the result of every application.
  const auto before = model.encode(tape, batch, NormPhase::kBatchCalibrated).value();
  for (auto& w : block.params.conv1.weight.value.data()) w = 0.0;
  const auto after = model.encode(tape, batch, NormPhase::kBatchCalibrated).value();
  CHECK(before.storage() != after.storage());
}

TEST_CASE("end-to-end gradient check") {
  for (const char* mode : {"none", "batch", "instance"}) {
    const auto res = testing::end_to_end_grad_check(mode);
    INFO(res.name, " ", res.error, " ", res.structural_zero);
    CHECK(res.error < 1e-4);
    CHECK(res.structural_zero < 1e-12);
  }
}

TEST_CASE("instance norm output does not depend on batch mates") {
  ModelConfig c = tiny(NormMode::kInstance);
  Autoencoder<double> model(c, 11);
  Tape<double> tape(false);
  const auto alone = model.autoencode(tape, batch_of({"same"}, c), NormPhase::kTrain).logits.value();
  const auto mixed = model.autoencode(tape, batch_of({"same", "other text", "z"}, c), NormPhase::kTrain).logits.value();
  for (std::size_t i = 0; i < alone.size(); ++i) REQUIRE(alone[i] == mixed[i]);
}

TEST_CASE("autoencode error counting") {
  ModelConfig c = tiny();
  const auto batch = batch_of({"abc"}, c);
  std::vector<std::int32_t> predicted = batch.ids;
  CHECK(count_errors(batch, predicted).byte_error() == 0.0);
  predicted[batch.seqs[0].positions[1]] = 'z';
  const auto st = count_errors(batch, predicted);
  CHECK(st.real_tokens == 4);
  CHECK(st.byte_error() == doctest::Approx(0.25));
  // PAD slots are not counted.
  predicted = batch.ids;
  predicted[1] = 'q';
  CHECK(count_errors(batch, predicted).wrong_tokens == 0);
}

TEST_CASE("model config validation and wrong lengths") {
  ModelConfig c = tiny();
  c.N = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny();
  c.r = c.K;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny();
  Autoencoder<float> model(c, 1);
  Tape<float> tape(false);
  ModelConfig other = c;
  other.K = 5;
  CHECK_THROWS_AS(model.autoencode(tape, batch_of({"abc"}, other), NormPhase::kTrain), std::invalid_argument);
  CHECK_THROWS_AS(stack_sequences({pad_balanced(tokenize_bytes("a"), 2), pad_balanced(tokenize_bytes("a"), 3)}),
                  std::invalid_argument);
}

TEST_CASE("word encoder places a 3-word sentence at slots 0, 16, 32") {
  const auto glove = tiny_glove();
  WordEncoderConfig wc;
  wc.norm_mode = NormMode::kNone;
  WordEncoder<double> enc(wc, glove, 1);
  const auto p = enc.prepare({"red", "cat", "zebra"});
  CHECK(p.ids.size() == 64);
  CHECK(p.positions == std::vector<std::size_t>{0, 16, 32});
  CHECK(p.ids[32] == enc.vocab().unk_id());
  CHECK(p.ids[1] == enc.vocab().pad_id());

  std::vector<std::string> long_sentence(80, "blue");
  const auto full = enc.prepare(long_sentence);
  CHECK(full.positions.size() == 64);
  for (auto id : full.ids) CHECK(id != enc.vocab().pad_id());

  Tape<double> tape(false);
  const auto v = enc.forward(tape, {{"red"}, {"blue", "cat"}, long_sentence}, NormPhase::kTrain);
  CHECK(v.shape() == Shape{3, 2});
  CHECK_THROWS_AS(enc.prepare({}), std::invalid_argument);
}

TEST_CASE("word embedding table is frozen with zero PAD and UNK rows") {
  const auto glove = tiny_glove();
  const auto table = make_word_embedding<double>(glove);
  CHECK(table.frozen);
  CHECK(table.vectors.value.shape() == Shape{5, 2});
  for (std::size_t i = 6; i < 10; ++i) CHECK(table.vectors.value[i] == 0.0);
  WordEncoderConfig wc;
  WordEncoder<double> enc(wc, glove, 1);
  for (auto* p : enc.parameters()) CHECK(p->name != "word_embedding");
}

TEST_CASE("bag of words and ensemble") {
  const auto glove = tiny_glove();
  const auto vocab = glove.vocab();
  CHECK(bow_embed<double>({"cat"}, glove, vocab).storage() == std::vector<double>{2, 2});
  CHECK(bow_embed<double>({"red", "blue"}, glove, vocab).storage() == std::vector<double>{0.5, 0.5});
  CHECK(bow_embed<double>({"red", "unknown"}, glove, vocab).storage() == std::vector<double>{0.5, 0});
  CHECK_THROWS_AS(bow_embed<double>({}, glove, vocab), std::invalid_argument);

  Rng rng(5);
  const std::vector<std::string> words = {"red", "blue", "cat", "red", "zzz", "cat"};
  for (int trial = 0; trial < 50; ++trial) {
    auto shuffled = words;
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
    CHECK(bow_embed<float>(shuffled, glove, vocab).storage() == bow_embed<float>(words, glove, vocab).storage());
  }

  const Tensor<double> e1({2}, std::vector<double>{1, 0}), e2({2}, std::vector<double>{0, 1});
  CHECK(ensemble_embed(e1, e2).storage() == std::vector<double>{1, 1});
  CHECK(ensemble_embed(Tensor<double>({2}), e2).storage() == e2.storage());
  CHECK_THROWS_AS(ensemble_embed(e1, Tensor<double>({3})), std::invalid_argument);
}

TEST_CASE("NLI head features and gradients") {
  Tape<double> tape(false);
  const auto p = tape.constant(Tensor<double>({1, 2}, std::vector<double>{1, -2}));
  const auto f = nli_features(p, p).value();
  CHECK(f.shape() == Shape{1, 8});
  CHECK(f[4] == 0.0);
  CHECK(f[5] == 0.0);
  CHECK(f[6] == 1.0);
  CHECK(f[7] == 4.0);

  Rng rng(2);
  NliHead<double> head(2, 5, rng);
  CHECK(head.forward(p, p).shape() == Shape{1, 3});

  const auto res = testing::nli_grad_check();
  INFO(res.name);
  CHECK(res.error < 1e-5);
}
