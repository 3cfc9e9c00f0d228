#include "doctest.h"
#include "recurseq/autodiff.hpp"
#include "support/grad_suite.hpp"

using namespace recurseq;

TEST_CASE("every op passes a central-difference check") {
  for (const auto& r : testing::op_grad_checks()) {
    INFO(r.name);
    CHECK(r.error < 1e-5);
  }
}

TEST_CASE("gradients accumulate across uses of one value") {
  Tape<double> tape;
  Var<double> x = tape.input(Tensor<double>({2}, std::vector<double>{3.0, -2.0}));
  Var<double> y = sum(add(mul(x, x), x));  // d/dx = 2x + 1
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(7.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("parameters collect gradients into their own buffer") {
  Parameter<double> p("w", Tensor<double>({2}, std::vector<double>{1.0, 2.0}));
  for (int round = 0; round < 2; ++round) {
    Tape<double> tape;
    tape.backward(sum(scale(tape.param(p), 3.0)));
  }
  CHECK(p.grad[0] == doctest::Approx(6.0));
  CHECK(p.grad[1] == doctest::Approx(6.0));
}

TEST_CASE("frozen parameters and frozen tapes collect nothing") {
  Parameter<double> p("w", Tensor<double>({1}, 2.0));
  {
    Tape<double> tape;
    Var<double> x = tape.input(Tensor<double>({1}, 1.0));
    tape.backward(sum(mul(x, tape.frozen(p))));
    CHECK(x.grad()[0] == doctest::Approx(2.0));
  }
  {
    Tape<double> tape;
    tape.freeze_params(true);
    Var<double> x = tape.input(Tensor<double>({1}, 1.0));
    tape.backward(sum(mul(x, tape.param(p))));
  }
  CHECK((p.grad.empty() || p.grad[0] == 0.0));
}

TEST_CASE("tape misuse is reported") {
  Tape<double> tape;
  Var<double> x = tape.input(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
  Var<double> y = sum(x);
  tape.backward(y);
  CHECK_THROWS(tape.backward(y));
  CHECK_THROWS(sum(x));

  Tape<double> other;
  Var<double> z = sum(other.input(Tensor<double>({1}, 1.0)));
  Tape<double> third;
  CHECK_THROWS(third.backward(z));
}

TEST_CASE("non-recording tape keeps values only") {
  Tape<double> tape(false);
  Var<double> x = tape.input(Tensor<double>({3}, 2.0));
  Var<double> y = sum(mul(x, x));
  CHECK(y.value().item() == doctest::Approx(12.0));
  CHECK_FALSE(y.requires_grad());
  CHECK(tape.size() == 0);
}

TEST_CASE("split_channels inverts concat_channels") {
  Tape<double> tape(false);
  Tensor<double> a({2, 3, 4}), b({2, 1, 4});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = -static_cast<double>(i);
  const auto joined = concat_channels(tape.constant(a), tape.constant(b)).value();
  CHECK(joined.shape() == Shape{2, 4, 4});
  const auto [a2, b2] = split_channels(joined, 3);
  CHECK(a2 == a);
  CHECK(b2 == b);
}
