#include "grad_suite.hpp"

#include <cmath>

#include "recurseq/model.hpp"

namespace recurseq::testing {

namespace {

// Values bounded away from zero so relu/abs kinks sit outside the stencil.
Tensor<double> random_tensor(const Shape& shape, Rng& rng) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) {
    const double u = rng.uniform(0.2, 1.0);
    v = rng.below(2) ? u : -u;
  }
  return t;
}

// sum(x * w) with a fixed random w, so no gradient direction cancels.
Var<double> project(const Var<double>& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, x.tape().constant(random_tensor(x.shape(), rng))));
}

}  // namespace

std::vector<GradCheckResult> op_grad_checks() {
  std::vector<GradCheckResult> out;
  Rng rng(2024);
  auto check = [&](const std::string& name, const ScalarFn& f, std::vector<Shape> shapes) {
    std::vector<Tensor<double>> inputs;
    for (const auto& s : shapes) inputs.push_back(random_tensor(s, rng));
    out.push_back({name, grad_check(f, inputs)});
  };

  check("add", [](Tape<double>&, auto in) { return project(add(in[0], in[1]), 1); }, {{3, 4}, {3, 4}});
  check("sub", [](Tape<double>&, auto in) { return project(sub(in[0], in[1]), 2); }, {{3, 4}, {3, 4}});
  check("mul", [](Tape<double>&, auto in) { return project(mul(in[0], in[1]), 3); }, {{3, 4}, {3, 4}});
  check("scale", [](Tape<double>&, auto in) { return project(scale(in[0], -1.7), 4); }, {{5}});
  check("relu", [](Tape<double>&, auto in) { return project(relu(in[0]), 5); }, {{2, 6}});
  check("abs", [](Tape<double>&, auto in) { return project(abs(in[0]), 6); }, {{2, 6}});
  check("sum", [](Tape<double>&, auto in) { return sum(mul(in[0], in[0])); }, {{7}});
  check("reshape", [](Tape<double>&, auto in) { return project(reshape(in[0], {4, 3}), 7); }, {{2, 6}});
  check("concat axis 0", [](Tape<double>&, auto in) { return project(concat(in[0], in[1], 0), 8); }, {{2, 3}, {4, 3}});
  check("concat axis 1", [](Tape<double>&, auto in) { return project(concat(in[0], in[1], 1), 9); }, {{2, 3}, {2, 5}});
  check("concat_channels",
        [](Tape<double>&, auto in) { return project(concat_channels(in[0], in[1]), 10); }, {{2, 3, 4}, {2, 2, 4}});
  check("conv1d k3", [](Tape<double>&, auto in) { return project(conv1d(in[0], in[1], in[2]), 11); },
        {{2, 3, 8}, {4, 3, 3}, {4}});
  check("conv1d k1", [](Tape<double>&, auto in) { return project(conv1d(in[0], in[1], in[2]), 12); },
        {{2, 3, 5}, {6, 3, 1}, {6}});
  check("conv1d stride 2", [](Tape<double>&, auto in) { return project(conv1d(in[0], in[1], in[2], 2), 13); },
        {{3, 8}, {2, 3, 3}, {2}});
  check("maxpool1d", [](Tape<double>&, auto in) { return project(maxpool1d(in[0]), 14); }, {{2, 3, 8}});
  check("expand1d", [](Tape<double>&, auto in) { return project(expand1d(in[0]), 15); }, {{2, 4, 3}});
  check("instance_norm",
        [](Tape<double>&, auto in) { return project(instance_norm(in[0], in[1], in[2]), 16); }, {{2, 3, 6}, {3}, {3}});
  check("linear", [](Tape<double>&, auto in) { return project(linear(in[0], in[1], in[2]), 17); },
        {{4, 5}, {3, 5}, {3}});
  check("linear vector", [](Tape<double>&, auto in) { return project(linear(in[0], in[1], in[2]), 18); },
        {{5}, {3, 5}, {3}});
  check("to_positions", [](Tape<double>&, auto in) { return project(to_positions(in[0]), 19); }, {{2, 3, 4}});

  {
    const std::vector<std::int32_t> targets = {0, 3, 2, 1, 4, 0};
    check("softmax_xent", [&](Tape<double>&, auto in) { return softmax_xent(in[0], targets); }, {{6, 5}});
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1};
    check("softmax_xent masked", [&](Tape<double>&, auto in) { return softmax_xent(in[0], targets, mask); },
          {{6, 5}});
  }

  {
    NormStats<double> stats("bn", 3, 0);
    Rng prng(31);
    stats.gamma.value = random_tensor({3}, prng);
    stats.beta.value = random_tensor({3}, prng);
    check("batch_norm input",
          [&](Tape<double>&, auto in) { return project(batch_norm(in[0], stats, NormPhase::kTrain), 20); },
          {{4, 3, 5}});
    const Tensor<double> x = random_tensor({4, 3, 5}, prng);
    std::vector<Parameter<double>*> params = {&stats.gamma, &stats.beta};
    out.push_back({"batch_norm gamma/beta", grad_check_params(
                                                 [&](Tape<double>& tape) {
                                                   return project(batch_norm(tape.constant(x), stats, NormPhase::kTrain), 21);
                                                 },
                                                 params)});
    stats.updates = 1;
    check("batch_norm infer",
          [&](Tape<double>&, auto in) { return project(batch_norm(in[0], stats, NormPhase::kInfer), 22); },
          {{2, 3, 5}});
  }

  {
    Rng prng(42);
    ResidualBlockParams<double> block{make_conv1d<double>("c1", 3, 3, 3, prng), make_conv1d<double>("c2", 3, 3, 3, prng)};
    NormStats<double> n1("n1", 3, 0), n2("n2", 3, 0);
    const Tensor<double> x = random_tensor({2, 3, 8}, prng);
    for (NormMode mode : {NormMode::kBatch, NormMode::kInstance, NormMode::kNone}) {
      // A bias feeding a normalization cancels out; its gradient is checked
      // to be zero instead of relative to numerical noise.
      std::vector<Parameter<double>*> params = {&block.conv1.weight, &block.conv2.weight};
      if (mode == NormMode::kNone) {
        params.push_back(&block.conv1.bias);
        params.push_back(&block.conv2.bias);
      } else {
        for (auto* p : {&n1.gamma, &n1.beta, &n2.gamma, &n2.beta}) params.push_back(p);
      }
      const auto f = [&](Tape<double>& tape) {
        return project(residual_block(tape.constant(x), block, n1, n2, mode, NormPhase::kTrain), 23);
      };
      const std::string name = "residual_block " + std::string(norm_mode_name(mode));
      out.push_back({name, grad_check_params(f, params)});
      if (mode != NormMode::kNone) {
        block.conv1.bias.zero_grad();
        block.conv2.bias.zero_grad();
        Tape<double> tape;
        tape.backward(f(tape));
        double worst = 0.0;
        for (auto* b : {&block.conv1.bias, &block.conv2.bias})
          for (double g : b->grad.data()) worst = std::max(worst, std::abs(g));
        out.push_back({name + " pre-norm bias (abs)", worst});
      }
    }
  }

  {
    Rng prng(51);
    EmbeddingTable<double> table{Parameter<double>("emb", random_tensor({6, 3}, prng)), false};
    const std::vector<std::int32_t> ids = {0, 2, 2, 5, 1, 0, 3, 3};
    std::vector<Parameter<double>*> params = {&table.vectors};
    out.push_back({"embedding_lookup", grad_check_params(
                                           [&](Tape<double>& tape) {
                                             return project(embedding_lookup(tape, table, ids, 2), 24);
                                           },
                                           params)});
  }
  return out;
}

GradCheckResult end_to_end_grad_check(const std::string& norm_mode) {
  ModelConfig cfg;
  cfg.N = 2;
  cfg.d = 4;
  cfg.K = 3;
  cfg.r = 1;
  cfg.vocab_size = 8;
  cfg.norm_mode = parse_norm_mode(norm_mode);
  Autoencoder<double> model(cfg, 5);
  Rng rng(6);
  std::vector<PaddedSequence> seqs;
  for (int b = 0; b < 3; ++b) {
    PaddedSequence s;
    s.K = 3;
    s.k = 3;
    s.pad_id = 7;
    s.original_length = 8;
    for (std::size_t i = 0; i < 8; ++i) {
      s.ids.push_back(static_cast<std::int32_t>(rng.below(8)));
      s.positions.push_back(i);
    }
    seqs.push_back(std::move(s));
  }
  const SequenceBatch batch = stack_sequences(std::move(seqs));
  // A bias feeding straight into a normalization has an exactly zero
  // gradient, so it is checked in absolute terms instead.
  std::vector<Parameter<double>*> checked, pre_norm;
  for (auto* p : model.parameters()) {
    const bool bias = p->name.ends_with(".bias") && !p->name.starts_with("decoder.output");
    (bias && cfg.norm_mode != NormMode::kNone ? pre_norm : checked).push_back(p);
  }
  auto loss = [&](Tape<double>& tape) { return model.autoencode(tape, batch, NormPhase::kTrain).loss; };
  GradCheckResult res{"autoencoder end-to-end (" + norm_mode + ")", grad_check_params(loss, checked, 1e-6)};
  {
    for (auto* p : pre_norm) p->zero_grad();
    Tape<double> tape;
    tape.backward(loss(tape));
    for (auto* p : pre_norm)
      for (double g : p->grad.data()) res.structural_zero = std::max(res.structural_zero, std::abs(g));
  }
  return res;
}

GradCheckResult nli_grad_check() {
  GloveTable glove;
  glove.dim = 4;
  Rng rng(77);
  for (const char* w : {"a", "b", "c", "d", "e"}) {
    glove.words.push_back(w);
    for (int i = 0; i < 4; ++i) glove.vectors.push_back(static_cast<float>(rng.uniform(-1, 1)));
  }
  WordEncoderConfig wc;
  wc.N = 2;
  wc.K = 2;
  wc.max_words = 4;
  wc.norm_mode = NormMode::kNone;
  WordEncoder<double> encoder(wc, glove, 3);
  NliHead<double> head(4, 5, rng);
  const std::vector<std::vector<std::string>> premises = {{"a", "b", "c"}, {"d", "zzz"}};
  const std::vector<std::vector<std::string>> hypotheses = {{"b"}, {"e", "a", "c", "d"}};
  const std::vector<std::int32_t> labels = {2, 0};
  std::vector<Parameter<double>*> params = encoder.parameters();
  for (auto* p : head.parameters()) params.push_back(p);
  const double err = grad_check_params(
      [&](Tape<double>& tape) {
        return softmax_xent(head.forward(encoder.forward(tape, premises, NormPhase::kTrain),
                                         encoder.forward(tape, hypotheses, NormPhase::kTrain)),
                            labels);
      },
      params);
  return {"word encoder + NLI head", err};
}

}  // namespace recurseq::testing
