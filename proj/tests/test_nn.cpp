#include <cmath>

#include "doctest.h"
#include "recurseq/nn.hpp"

using namespace recurseq;

namespace {

Tensor<double> iota(const Shape& shape, double start = 1.0, double step = 1.0) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = start + step * static_cast<double>(i);
  return t;
}

// Direct cross-correlation with (k-1)/2 zeros on the left.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = w.dim(0), k = w.dim(2);
  const std::ptrdiff_t left = static_cast<std::ptrdiff_t>((k - 1) / 2);
  Tensor<double> y({B, O, T});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t t = 0; t < T; ++t) {
        double acc = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - left;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            acc += w[(o * C + c) * k + j] * x[(n * C + c) * T + static_cast<std::size_t>(src)];
          }
        y[(n * O + o) * T + t] = acc;
      }
  return y;
}

}  // namespace

TEST_CASE("conv1d hand example") {
  Tape<double> tape(false);
  const auto x = tape.constant(Tensor<double>({1, 1, 4}, std::vector<double>{1, 2, 3, 4}));
  const auto w = tape.constant(Tensor<double>({1, 1, 3}, std::vector<double>{1, 0, -1}));
  const auto b = tape.constant(Tensor<double>({1}, 0.5));
  const auto y = conv1d(x, w, b).value();
  CHECK(y.shape() == Shape{1, 1, 4});
  CHECK(y[0] == doctest::Approx(-1.5));
  CHECK(y[1] == doctest::Approx(-1.5));
  CHECK(y[2] == doctest::Approx(-1.5));
  CHECK(y[3] == doctest::Approx(3.5));
}

TEST_CASE("conv1d matches direct cross-correlation") {
  Rng rng(9);
  for (std::size_t k : {1, 3, 5}) {
    Tensor<double> x({3, 4, 7}), w({5, 4, k}), b({5});
    for (auto* t : {&x, &w, &b})
      for (auto& v : t->data()) v = rng.uniform(-1, 1);
    Tape<double> tape(false);
    const auto y = conv1d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
    const auto ref = naive_conv(x, w, b);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv1d accepts unbatched input and rejects bad shapes") {
  Tape<double> tape(false);
  Rng rng(1);
  auto p = make_conv1d<double>("c", 2, 3, 3, rng);
  CHECK(conv1d(tape.constant(Tensor<double>({2, 8})), p).shape() == Shape{3, 8});
  CHECK(conv1d(tape.constant(Tensor<double>({2, 8})), p, 2).shape() == Shape{3, 4});
  CHECK_THROWS_AS(conv1d(tape.constant(Tensor<double>({3, 8})), p), std::invalid_argument);
}

TEST_CASE("single conv parameter count") {
  Rng rng(1);
  auto p = make_conv1d<double>("c", 2, 2, 3, rng);
  CHECK(p.weight.value.size() + p.bias.value.size() == 14);
}

TEST_CASE("maxpool halves length and routes ties left") {
  Tape<double> tape;
  Var<double> x = tape.input(Tensor<double>({1, 2, 4}, std::vector<double>{1, 3, 2, 2, -1, -4, 5, 0}));
  Var<double> y = maxpool1d(x);
  CHECK(y.value().storage() == std::vector<double>{3, 2, -1, 5});
  tape.backward(sum(y));
  CHECK(x.grad().storage() == std::vector<double>{0, 1, 1, 0, 1, 0, 1, 0});
  Tape<double> t2(false);
  CHECK_THROWS_AS(maxpool1d(t2.constant(Tensor<double>({1, 1, 3}))), std::invalid_argument);
}

TEST_CASE("expand1d interleaves the upper channels as odd steps") {
  Tape<double> tape(false);
  const auto x = iota({4, 2}, 0.0);  // channels 0..3, steps 0..1
  const auto y = expand1d(tape.constant(x)).value();
  REQUIRE(y.shape() == Shape{2, 4});
  // out[c, 2t] = x[c, t]; out[c, 2t+1] = x[c+2, t]
  CHECK(y.storage() == std::vector<double>{0, 4, 1, 5, 2, 6, 3, 7});
  CHECK_THROWS_AS(expand1d(tape.constant(Tensor<double>({3, 2}))), std::invalid_argument);
}

TEST_CASE("batch norm train mode uses population statistics") {
  NormStats<double> stats("bn", 1, 0);
  Tape<double> tape(false);
  const auto x = Tensor<double>({2, 1, 2}, std::vector<double>{1, 2, 3, 4});
  const auto y = batch_norm(tape.constant(x), stats, NormPhase::kTrain).value();
  const double sd = std::sqrt(1.25 + kNormEpsilon);
  CHECK(y[0] == doctest::Approx(-1.5 / sd));
  CHECK(y[3] == doctest::Approx(1.5 / sd));
  CHECK(stats.running_mean[0] == doctest::Approx(0.25));
  CHECK(stats.running_var[0] == doctest::Approx(1.025));
  CHECK(stats.updates == 1);
}

TEST_CASE("batch norm infer and calibrated phases") {
  NormStats<double> stats("bn", 1, 0);
  Tape<double> tape(false);
  const auto x = tape.constant(Tensor<double>({2, 1, 2}, std::vector<double>{1, 2, 3, 4}));
  CHECK_THROWS_AS(batch_norm(x, stats, NormPhase::kInfer), std::logic_error);

  const auto calibrated = batch_norm(x, stats, NormPhase::kBatchCalibrated).value();
  CHECK(stats.updates == 0);
  CHECK(calibrated[0] == doctest::Approx(-1.5 / std::sqrt(1.25 + kNormEpsilon)));

  stats.running_mean[0] = 2.0;
  stats.running_var[0] = 4.0;
  stats.gamma.value[0] = 3.0;
  stats.beta.value[0] = 1.0;
  stats.updates = 1;
  const auto y = batch_norm(x, stats, NormPhase::kInfer).value();
  CHECK(y[3] == doctest::Approx(3.0 * 2.0 / std::sqrt(4.0 + kNormEpsilon) + 1.0));
  CHECK_THROWS_AS(batch_norm(tape.constant(Tensor<double>({1, 1, 2})), stats, NormPhase::kTrain),
                  std::invalid_argument);
}

TEST_CASE("instance norm normalizes each sample separately") {
  Tape<double> tape(false);
  const auto x = Tensor<double>({2, 1, 2}, std::vector<double>{1, 3, 10, 30});
  const auto g = tape.constant(Tensor<double>({1}, 1.0));
  const auto b = tape.constant(Tensor<double>({1}, 0.0));
  const auto y = instance_norm(tape.constant(x), g, b).value();
  CHECK(y[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + kNormEpsilon)));
  CHECK(y[2] == doctest::Approx(-10.0 / std::sqrt(100.0 + kNormEpsilon)));
}

TEST_CASE("embedding lookup lays out [B, d, T]") {
  EmbeddingTable<double> table{Parameter<double>("e", iota({3, 2}, 0.0)), false};
  Tape<double> tape(false);
  const std::vector<std::int32_t> ids = {2, 0, 1, 1};
  const auto y = embedding_lookup(tape, table, ids, 2).value();
  REQUIRE(y.shape() == Shape{2, 2, 2});
  // sample 0: ids 2,0 -> rows (4,5),(0,1); channel-major
  CHECK(y.storage() == std::vector<double>{4, 0, 5, 1, 2, 2, 3, 3});
  const std::vector<std::int32_t> bad = {3};
  CHECK_THROWS_AS(embedding_lookup(tape, table, bad), std::out_of_range);
}

TEST_CASE("linear and to_positions") {
  Tape<double> tape(false);
  const auto w = tape.constant(Tensor<double>({2, 3}, std::vector<double>{1, 0, 2, 0, 1, -1}));
  const auto b = tape.constant(Tensor<double>({2}, std::vector<double>{0.5, -0.5}));
  const auto y = linear(tape.constant(Tensor<double>({3}, std::vector<double>{1, 2, 3})), w, b).value();
  CHECK(y.storage() == std::vector<double>{7.5, -1.5});

  const auto pos = to_positions(tape.constant(iota({1, 2, 3}, 0.0))).value();
  CHECK(pos.shape() == Shape{3, 2});
  CHECK(pos.storage() == std::vector<double>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("softmax cross-entropy of uniform logits is ln V") {
  Tape<double> tape(false);
  const std::vector<std::int32_t> targets = {0, 257, 13};
  const auto loss = softmax_xent(tape.constant(Tensor<double>({3, 258})), targets);
  CHECK(loss.value().item() == doctest::Approx(std::log(258.0)).epsilon(1e-12));
  CHECK(std::log(258.0) == doctest::Approx(5.5530).epsilon(1e-4));

  Tensor<double> sharp({1, 4});
  sharp[2] = 50.0;
  const std::vector<std::int32_t> t2 = {2};
  CHECK(softmax_xent(tape.constant(sharp), t2).value().item() < 1e-20);
  const std::vector<std::int32_t> t3 = {4};
  CHECK_THROWS_AS(softmax_xent(tape.constant(sharp), t3), std::out_of_range);
}
