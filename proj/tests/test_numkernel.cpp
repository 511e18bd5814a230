#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "cilforge/errors.hpp"
#include "cilforge/ops.hpp"
#include "cilforge/optim.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cilforge;
using cilforge::testing::gradcheck;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, bool grad = true) {
  SplitMix64 rng(seed);
  return Tensor::randn(std::move(s), rng, 1.0, grad);
}

}  // namespace

TEST_CASE("matmul identity and oracle") {
  Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  CHECK(ops::matmul(eye, eye).values() == eye.values());
  Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(ops::matmul(m, eye).values() == m.values());

  Tensor a = random_tensor({3, 4}, 1, false);
  Tensor b = random_tensor({4, 2}, 2, false);
  Tensor c = ops::matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, k}) * b.at({k, j});
      CHECK(std::abs(c.at({i, j}) - acc) <= 1e-12);
    }
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    ops::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto s = ops::softmax(Tensor({2}, {0.0, 0.0}));
  CHECK(s.values() == std::vector<double>{0.5, 0.5});
  for (double c : {-7.0, 0.0, 3.5, 1e6}) {
    auto q = ops::softmax(Tensor::full({4}, c));
    for (double v : q.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  auto big = ops::softmax(Tensor({2}, {1000.0, 0.0}));
  CHECK(std::isfinite(big.values()[0]));
  CHECK(big.values()[0] == doctest::Approx(1.0));
  CHECK(big.values()[1] < 1e-300);
  CHECK_THROWS_AS(ops::softmax(Tensor({2}, {std::numeric_limits<double>::infinity(), 0.0})),
                  NumericInputError);
}

TEST_CASE("softmax rows sum to one") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SplitMix64 rng(seed);
    Tensor x = Tensor::randn({5, 7}, rng, 30.0);
    Tensor y = ops::softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(y.at({r, j}) >= 0.0);
        s += y.at({r, j});
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("cross entropy examples") {
  std::vector<int> t2 = {0, 1};
  CHECK(ops::cross_entropy(Tensor::zeros({2, 2}), t2).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  std::vector<int> t10 = {3};
  CHECK(ops::cross_entropy(Tensor::zeros({1, 10}), t10).item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
  std::vector<int> t = {1};
  CHECK(ops::cross_entropy(Tensor({1, 2}, {0.0, 20.0}), t).item() < 1e-8);
  std::vector<int> bad = {2};
  CHECK_THROWS_AS(ops::cross_entropy(Tensor::zeros({1, 2}), bad), LabelError);
}

TEST_CASE("backward examples") {
  Tensor x({3}, {0.3, -1.0, 2.0}, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = ops::sum(x);
  }
  auto grads = tape.backward(loss);
  REQUIRE(grads.contains(x));
  CHECK(std::vector<double>(grads.of(x).begin(), grads.of(x).end()) ==
        std::vector<double>{1, 1, 1});

  Tensor y({2}, {1.0, 2.0}, true);
  Tape tape2;
  {
    Tape::Scope scope(tape2);
    loss = ops::dot(y, y);
  }
  tape2.backward(loss);
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(4.0));
  CHECK(tape2.last_backward_visits() == tape2.size());

  Tape tape3;
  Tensor v;
  {
    Tape::Scope scope(tape3);
    v = ops::scale(y, 2.0);
  }
  CHECK_THROWS_AS(tape3.backward(v), ContractError);
}

TEST_CASE("no recording without an active tape") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y = ops::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradient check for every primitive") {
  for (const auto& c : testing::primitive_grad_cases()) {
    CAPTURE(c.name);
    CHECK(gradcheck(c.params, c.loss).max_rel_error <= 1e-4);
  }
}

TEST_CASE("cosine similarity examples") {
  Tensor v({3}, {1.0, -2.0, 0.5});
  Tensor neg({3}, {-1.0, 2.0, -0.5});
  CHECK(ops::cosine_similarity(v, v).item() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(ops::cosine_similarity(v, neg).item() == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(ops::cosine_similarity(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})).item() == 0.0);
  CHECK(ops::cosine_similarity(Tensor::zeros({3}), v).item() == 0.0);
}

TEST_CASE("milestone schedule is exact") {
  OptimConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.milestones = {3, 6};
  cfg.lr_decay = 0.5;
  CHECK(scheduled_lr(cfg, 0) == 0.1);
  CHECK(scheduled_lr(cfg, 2) == 0.1);
  CHECK(scheduled_lr(cfg, 3) == 0.1 * 0.5);
  CHECK(scheduled_lr(cfg, 5) == 0.1 * 0.5);
  CHECK(scheduled_lr(cfg, 6) == 0.1 * 0.5 * 0.5);
  CHECK(scheduled_lr(cfg, 100) == 0.1 * 0.25);
}

TEST_CASE("optimizers minimise a quadratic") {
  for (OptimKind kind : {OptimKind::kSgdMomentum, OptimKind::kAdam}) {
    Tensor x({2}, {3.0, -2.0}, true);
    OptimConfig cfg;
    cfg.kind = kind;
    cfg.learning_rate = kind == OptimKind::kAdam ? 0.1 : 0.05;
    Optimizer opt(cfg, {x});
    for (int i = 0; i < 300; ++i) {
      opt.zero_grad();
      Tape tape;
      Tensor loss;
      {
        Tape::Scope scope(tape);
        loss = ops::dot(x, x);
      }
      tape.backward(loss);
      opt.step();
    }
    CHECK(std::abs(x.values()[0]) < 1e-2);
    CHECK(std::abs(x.values()[1]) < 1e-2);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  Tensor c = t.clone();
  c.mutable_data()[0] = 9.0;
  CHECK(t.values()[0] == 1.0);
}
