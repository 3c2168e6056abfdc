#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "roundtrip/gradcheck.hpp"
#include "roundtrip/gradsuite.hpp"
#include "roundtrip/ops.hpp"
#include "test_util.hpp"

using namespace roundtrip;
using namespace roundtrip::ad;
using roundtrip::testing::random_tensor;

namespace {

Tensor onehot_row(std::size_t n, std::size_t k) {
  Tensor t({1, n});
  t[k] = 1;
  return t;
}

}  // namespace

TEST_CASE("stable_softmax examples") {
  Tape tape;
  auto y = softmax_rows(tape.constant(Tensor::row({0, 0})));
  CHECK(y.value()[0] == doctest::Approx(0.5));
  CHECK(y.value()[1] == doctest::Approx(0.5));

  auto big = softmax_rows(tape.constant(Tensor::row({1000, 0})));
  CHECK(big.value()[0] == doctest::Approx(1.0));
  CHECK(big.value()[1] < 1e-300);
  CHECK(big.value().all_finite());
}

TEST_CASE("stable_softmax gradient matches central differences") {
  std::mt19937_64 rng(7);
  auto point = random_tensor({1, 6}, rng, -2, 2);
  const auto target = onehot_row(6, 2);
  ScalarFn f = [&](Var x) { return dot(softmax_rows(x), x.tape().constant(target)); };
  CHECK(grad_check(f, point, 1e-5) < 1e-6);
}

TEST_CASE("stable_softmax rejects non-finite input") {
  Tape tape;
  CHECK_THROWS_AS(softmax_rows(tape.constant(Tensor::row({1, NAN}))), InvalidValueError);
  CHECK_THROWS_AS(softmax_rows(tape.constant(Tensor::row({INFINITY, 0}))), InvalidValueError);
  CHECK_THROWS_AS(log_softmax_rows(tape.constant(Tensor::row({NAN}))), InvalidValueError);
}

TEST_CASE("softmax outputs are distributions and shift invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    auto x = random_tensor({3, 7}, rng, -50, 50);
    auto y = softmax_rows(tape.constant(x)).value();
    Tensor shifted = x;
    for (auto& v : shifted.values()) v += Real(123.25);
    auto ys = softmax_rows(tape.constant(shifted)).value();
    for (std::size_t i = 0; i < 3; ++i) {
      Real s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(y.at(i, j) >= 0);
        s += y.at(i, j);
        CHECK(std::abs(y.at(i, j) - ys.at(i, j)) < 1e-12);
      }
      CHECK(std::abs(s - 1) < 1e-9);
    }
  }
}

TEST_CASE("layer_norm examples") {
  Tape tape;
  auto ones = tape.constant(Tensor::row({1, 1, 1}));
  auto zeros = tape.constant(Tensor::row({0, 0, 0}));
  auto flat = layer_norm(tape.constant(Tensor::row({4, 4, 4})), ones, zeros, 1e-6);
  for (auto v : flat.value().values()) CHECK(v == 0);

  auto unit = layer_norm(tape.constant(Tensor::row({1, -1})), tape.constant(Tensor::row({1, 1})),
                         tape.constant(Tensor::row({0, 0})), 0);
  CHECK(unit.value()[0] == doctest::Approx(1.0));
  CHECK(unit.value()[1] == doctest::Approx(-1.0));

  CHECK_THROWS_AS(layer_norm(tape.constant(Tensor::row({1, 2})), ones, zeros, 1e-6), ShapeError);
  CHECK_THROWS_AS(Tensor({0}), ShapeError);
}

TEST_CASE("layer_norm gradient on a random 8-vector") {
  std::mt19937_64 rng(3);
  auto point = random_tensor({1, 8}, rng);
  auto gain = random_tensor({1, 8}, rng);
  auto bias = random_tensor({1, 8}, rng);
  auto proj = random_tensor({1, 8}, rng);
  ScalarFn f = [&](Var x) {
    auto& t = x.tape();
    return dot(layer_norm(x, t.constant(gain), t.constant(bias), 1e-6), t.constant(proj));
  };
  CHECK(grad_check(f, point) < 1e-6);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones") {
    Tape tape;
    auto x = tape.variable(Tensor({2, 3, 2}, Real(0.3)));
    tape.backward(sum(x));
    for (auto g : x.grad().values()) CHECK(g == 1);
  }
  SUBCASE("dot gives the other operand") {
    Tape tape;
    std::mt19937_64 rng(5);
    auto xv = random_tensor({4}, rng), yv = random_tensor({4}, rng);
    auto x = tape.variable(xv);
    auto y = tape.variable(yv);
    tape.backward(dot(x, y));
    CHECK(x.grad() == yv);
    CHECK(y.grad() == xv);
  }
  SUBCASE("empty tape") {
    Tape tape;
    Tape other;
    auto loss = other.variable(Tensor::scalar(1));
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    auto x = tape.variable(Tensor({2}, Real(1)));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
  SUBCASE("unreachable parameters keep a zero gradient") {
    ParameterStore store;
    auto& used = store.add("used", Tensor({2}, Real(2)));
    auto& unused = store.add("unused", Tensor({3}, Real(1)));
    store.zero_grad();
    Tape tape;
    tape.param(unused);
    tape.backward(sum(mul(tape.param(used), tape.param(used))));
    CHECK(used.grad[0] == 4);
    for (auto g : unused.grad.values()) CHECK(g == 0);
  }
  SUBCASE("gradient accumulates across uses of one parameter") {
    ParameterStore store;
    auto& p = store.add("p", Tensor({1}, Real(3)));
    store.zero_grad();
    Tape tape;
    auto a = tape.param(p);
    auto b = tape.param(p);
    CHECK(a.id() == b.id());
    tape.backward(add(scale(a, 2), scale(b, 5)));
    CHECK(p.grad[0] == 7);
  }
  SUBCASE("clear releases nodes") {
    Tape tape;
    tape.variable(Tensor::scalar(1));
    tape.clear();
    CHECK(tape.empty());
  }
}

TEST_CASE("grad_check examples") {
  ScalarFn squares = [](Var x) { return sum(mul(x, x)); };
  CHECK(grad_check(squares, Tensor::row({1, 2, 3}), 1e-5) < 1e-8);

  std::mt19937_64 rng(17);
  auto logits = random_tensor({1, 10}, rng, -3, 3);
  ScalarFn ce = [](Var x) {
    std::vector<int> t{4};
    std::vector<Real> w{1};
    return cross_entropy(x, t, w);
  };
  CHECK(grad_check(ce, logits) < 1e-6);

  // Hard argmax: the forward value is piecewise constant, so central
  // differences see a zero slope while the surrogate gradient does not.
  auto weights = Tensor::row({1, -2, 3, 0.5});
  ScalarFn hard = [weights](Var x) {
    const auto& v = x.value();
    std::size_t best = 0;
    for (std::size_t j = 1; j < v.size(); ++j)
      if (v[j] > v[best]) best = j;
    Tensor onehot({1, v.size()});
    onehot[best] = 1;
    return dot(straight_through(onehot, softmax_rows(x)), x.tape().constant(weights));
  };
  CHECK(grad_check(hard, Tensor::row({0.3, 0.1, -0.2, 0.05})) > 0.1);
  CHECK_THROWS_AS(grad_check(squares, Tensor::row({1}), 0), std::invalid_argument);
}

TEST_CASE("every primitive passes grad_check over 100 random seeds") {
  for (const auto& prim : verify::primitive_checks()) {
    Real worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      auto f = prim.make(rng);
      auto point = random_tensor(prim.input, rng, prim.lo, prim.hi);
      worst = std::max(worst, grad_check(f, point, 1e-5));
    }
    INFO(prim.name);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("tape replay is deterministic") {
  auto run = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tape tape;
    auto x = tape.variable(random_tensor({4, 5}, rng));
    auto w = tape.variable(random_tensor({5, 3}, rng));
    auto y = log_softmax_rows(tanh(matmul(x, w)));
    tape.backward(sum(mul(y, y)));
    return std::make_pair(x.grad(), w.grad());
  };
  CHECK(run(42) == run(42));
}

TEST_CASE("primitive error paths") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({2, 4}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::row({0}))), InvalidValueError);
  CHECK_THROWS_AS(exp(tape.constant(Tensor::row({1e6}))), InvalidValueError);
  std::vector<int> bad{9};
  CHECK_THROWS_AS(lookup(a, bad), std::out_of_range);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(dropout(a, 1, rng), std::invalid_argument);
  Tape other;
  CHECK_THROWS_AS(add(a, other.constant(Tensor({2, 3}))), std::invalid_argument);
}

TEST_CASE("inverted dropout keeps the expectation and is identity at p=0") {
  Tape tape;
  std::mt19937_64 rng(9);
  auto x = tape.constant(Tensor({100, 100}, Real(1)));
  auto y = dropout(x, Real(0.2), rng);
  Real mean = 0;
  std::size_t zeros = 0;
  for (auto v : y.value().values()) {
    mean += v;
    zeros += v == 0;
    CHECK((v == 0 || std::abs(v - 1.25) < 1e-12));
  }
  mean /= 10000;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.03));
  CHECK(zeros > 1700);
  CHECK(zeros < 2300);
  CHECK(dropout(x, 0, rng).id() == x.id());
}

TEST_CASE("straight-through forward value is exactly the hard value") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    auto logits = tape.variable(random_tensor({3, 6}, rng, -4, 4));
    auto soft = softmax_rows(logits);
    Tensor hard({3, 6});
    for (std::size_t i = 0; i < 3; ++i) hard.at(i, static_cast<std::size_t>(trial) % 6) = 1;
    auto st = straight_through(hard, soft);
    CHECK(st.value() == hard);
  }
}
