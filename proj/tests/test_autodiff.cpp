#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"

#include "agft/autodiff.hpp"
#include "agft/error.hpp"
#include "agft/optim.hpp"
#include "test_support.hpp"

using namespace agft;
using agft::testing::max_rel_error;
using agft::testing::random_tensor;

namespace {

using UnaryOp = std::function<Var(Tape&, Var)>;

// Scalarises op(x) with a fixed random weighting and compares the tape
// gradient with central differences.
double op_grad_error(const UnaryOp& op, const Tensor& x, std::mt19937_64& rng) {
  Tensor weight;
  {
    Tape probe;
    weight = random_tensor(op(probe, probe.constant(x)).shape(), rng);
  }
  auto scalar = [&](Tape& tape, Var xv) {
    Var out = op(tape, xv);
    return out.shape().empty() ? scale(out, weight.item()) : sum(mul(out, tape.constant(weight)));
  };
  Tape tape;
  Var xv = tape.leaf(x, "x");
  Tensor g = grad(scalar(tape, xv), {xv}).front();
  Tensor fd = finite_difference_grad(
      [&](const Tensor& xp) {
        Tape t;
        return scalar(t, t.constant(xp)).value().item();
      },
      x, 1e-4);
  return max_rel_error(g, fd);
}

// Keeps values away from the ReLU kink and from log's singularity.
Tensor away_from_zero(Tensor t, double margin = 0.05) {
  for (double& v : t.data()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
  return t;
}

}  // namespace

TEST_CASE("grad of sum(x*x) is 2x") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2, 3}), "x");
  Tensor g = grad(sum(x * x), {x}).front();
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
}

TEST_CASE("grad of a constant loss is zero") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2, 3}), "x");
  Var five = tape.constant(Tensor::scalar(5.0));
  Tensor g = grad(five, {x}).front();
  REQUIRE(g.size() == 3);
  for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("soft cross-entropy of a 3-class softmax matches finite differences") {
  std::mt19937_64 rng(11);
  const Tensor target = agft::testing::random_stochastic(1, 3, rng);
  for (int rep = 0; rep < 5; ++rep) {
    const Tensor logits = random_tensor({1, 3}, rng, -3, 3);
    auto f = [&](Tape& t, Var z) {
      return scale(sum(mul(log_softmax_rows(z), t.constant(target))), -1.0);
    };
    Tape tape;
    Var z = tape.leaf(logits, "logits");
    Tensor g = grad(f(tape, z), {z}).front();
    Tensor fd = finite_difference_grad(
        [&](const Tensor& zp) {
          Tape t;
          return f(t, t.constant(zp)).value().item();
        },
        logits, 1e-4);
    CHECK(max_rel_error(g, fd) <= 1e-4);
  }
}

TEST_CASE("grad rejects non-scalar losses and foreign tensors") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}), "x");
  CHECK_THROWS_AS(grad(x * x, {x}), ContractViolation);

  Tape other;
  Var stranger = other.leaf(Tensor::vector({1}), "stranger");
  Tape t2;
  Var y = t2.leaf(Tensor::vector({1, 2}), "y");
  try {
    grad(sum(y), {stranger});
    FAIL("expected an error");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("stranger") != std::string::npos);
  }
}

TEST_CASE("tensor recorded after the loss is reported by name") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}), "x");
  Var loss = sum(x);
  Var late = tape.leaf(Tensor::vector({3}), "late_param");
  try {
    grad(loss, {late});
    FAIL("expected an error");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("late_param") != std::string::npos);
  }
}

TEST_CASE("tape is consumed by grad") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}), "x");
  Var loss = sum(x * x);
  grad(loss, {x});
  CHECK(tape.consumed());
  CHECK_THROWS_AS(grad(loss, {x}), ContractViolation);
  tape.reset();
  CHECK(tape.size() == 0);
  CHECK_FALSE(tape.consumed());
}

TEST_CASE("a tensor used twice receives the sum of both contributions") {
  std::mt19937_64 rng(3);
  const Tensor xv = random_tensor({2, 3}, rng);
  Tape t1;
  Var a = t1.leaf(xv, "a");
  Tensor once = grad(sum(exp(a)), {a}).front();
  Tape t2;
  Var b = t2.leaf(xv, "b");
  Tensor twice = grad(add(sum(exp(b)), sum(exp(b))), {b}).front();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
}

TEST_CASE("every differentiable op matches finite differences over 50 seeds") {
  struct Case {
    const char* name;
    Shape shape;
    UnaryOp op;
    bool keep_off_zero = false;
    bool positive = false;
  };
  std::mt19937_64 wrng(99);
  const Tensor m34 = random_tensor({3, 4}, wrng);
  const Tensor m43 = random_tensor({4, 3}, wrng);
  const Tensor b4 = random_tensor({4}, wrng);
  const std::vector<std::size_t> pick_idx = {2, 0, 3};
  const std::vector<std::ptrdiff_t> remap = {1, -1, 0, 3};

  const std::vector<Case> cases = {
      {"matmul_left", {3, 4}, [&](Tape& t, Var x) { return matmul(x, t.constant(m43)); }},
      {"matmul_right", {4, 3}, [&](Tape& t, Var x) { return matmul(t.constant(m34), x); }},
      {"transpose", {3, 4}, [](Tape&, Var x) { return transpose(x); }},
      {"add", {3, 4}, [&](Tape& t, Var x) { return add(x, t.constant(m34)); }},
      {"sub", {3, 4}, [&](Tape& t, Var x) { return sub(t.constant(m34), x); }},
      {"mul", {3, 4}, [&](Tape& t, Var x) { return mul(x, t.constant(m34)); }},
      {"mul_self", {3, 4}, [](Tape&, Var x) { return mul(x, x); }},
      {"add_bias_rows", {3, 4}, [&](Tape& t, Var x) { return add_bias(x, t.constant(b4)); }},
      {"add_bias_bias", {4}, [&](Tape& t, Var x) { return add_bias(t.constant(m34), x); }},
      {"scale", {3, 4}, [](Tape&, Var x) { return scale(x, -2.5); }},
      {"add_scalar", {3, 4}, [](Tape&, Var x) { return add_scalar(x, 0.7); }},
      {"relu", {3, 4}, [](Tape&, Var x) { return relu(x); }, true},
      {"exp", {3, 4}, [](Tape&, Var x) { return exp(x); }},
      {"log", {3, 4}, [](Tape&, Var x) { return log(x); }, false, true},
      {"sum", {3, 4}, [](Tape&, Var x) { return sum(x); }},
      {"mean", {3, 4}, [](Tape&, Var x) { return mean(x); }},
      {"row_l2_normalize", {3, 4}, [](Tape&, Var x) { return row_l2_normalize(x); }},
      {"log_softmax_rows", {3, 4}, [](Tape&, Var x) { return log_softmax_rows(scale(x, 5.0)); }},
      {"pick", {3, 4}, [&](Tape&, Var x) { return pick(x, pick_idx); }},
      {"row_max_except", {3, 4}, [&](Tape&, Var x) { return row_max_except(x, pick_idx); }},
      {"remap_columns", {3, 4}, [&](Tape&, Var x) { return remap_columns(x, remap); }},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed);
      Tensor x = c.positive ? random_tensor(c.shape, rng, 0.2, 2.0) : random_tensor(c.shape, rng);
      if (c.keep_off_zero) x = away_from_zero(x);
      worst = std::max(worst, op_grad_error(c.op, x, rng));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("finite_difference_grad examples") {
  Tensor g = finite_difference_grad(
      [](const Tensor& x) { return x[0] * x[0]; }, Tensor::vector({3.0}), 1e-4);
  CHECK(std::abs(g[0] - 6.0) <= 1e-6);

  Tensor z = finite_difference_grad([](const Tensor&) { return 4.0; }, Tensor::vector({1, 2}), 1e-4);
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);

  CHECK_THROWS_AS(finite_difference_grad([](const Tensor&) { return NAN; }, Tensor::vector({1}), 1e-4),
                  NumericalError);
  CHECK_THROWS_AS(finite_difference_grad([](const Tensor& x) { return x[0]; }, Tensor::vector({1}), 0.0),
                  ContractViolation);
}

TEST_CASE("cosine-similarity-then-softmax chain cross-checks with finite differences") {
  std::mt19937_64 rng(5);
  const Tensor protos = agft::testing::random_unit_rows(4, 6, rng);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor x = random_tensor({2, 6}, rng);
    auto f = [&](Tape& t, Var xv) {
      Var s = matmul(row_l2_normalize(xv), transpose(t.constant(protos)));
      return sum(pick(log_softmax_rows(scale(s, 10.0)), std::vector<std::size_t>{1, 3}));
    };
    Tape tape;
    Var xv = tape.leaf(x, "x");
    Tensor g = grad(f(tape, xv), {xv}).front();
    Tensor fd = finite_difference_grad(
        [&](const Tensor& xp) {
          Tape t;
          return f(t, t.constant(xp)).value().item();
        },
        x, 1e-4);
    CHECK(max_rel_error(g, fd) <= 1e-4);
  }
}

TEST_CASE("forward outputs stay finite for inputs bounded by 10") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    Tape tape;
    Var x = tape.leaf(random_tensor({4, 5}, rng, -10, 10), "x");
    CHECK(exp(x).value().all_finite());
    CHECK(log_softmax_rows(scale(x, 220.0)).value().all_finite());
    CHECK(row_l2_normalize(x).value().all_finite());
    CHECK(row_l2_normalize(scale(x, 0.0)).value().all_finite());
    CHECK(log(add_scalar(mul(x, x), 1.0)).value().all_finite());
  }
}

TEST_CASE("row_l2_normalize of a zero row stays finite") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 3, {0, 0, 0}), "x");
  Var y = row_l2_normalize(x);
  for (double v : y.value().data()) CHECK(v == 0.0);
  Tensor g = grad(sum(y), {x}).front();
  CHECK(g.all_finite());
}

TEST_CASE("pick and row_max_except break ties toward the lowest index") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 4, {5, 1, 5, 0}), "x");
  Var m = row_max_except(x, std::vector<std::size_t>{3});
  CHECK(m.value()[0] == 5.0);
  Tensor g = grad(sum(m), {x}).front();
  CHECK(g[0] == 1.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("matmul_into agrees with a naive triple loop") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
  std::vector<double> out(6);
  matmul_into(a.data(), b.data(), out, 3, 5, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(out[i * 2 + j] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("shape mismatches are contract violations") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}), "a");
  Var b = tape.leaf(Tensor({3, 2}), "b");
  CHECK_THROWS_AS(add(a, b), ContractViolation);
  CHECK_THROWS_AS(matmul(a, a), ContractViolation);
  Tape other;
  Var c = other.leaf(Tensor({2, 3}), "c");
  CHECK_THROWS_AS(add(a, c), ContractViolation);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS(Tensor({2, 2}, std::vector<double>{1, 2, 3}));
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
  CHECK(t.ensure_grad().size() == 6);
  CHECK(t.has_grad());
  t.clear_grad();
  CHECK_FALSE(t.has_grad());
  Tensor u = t;
  CHECK(bitwise_equal(t, u));
  u[0] = -0.0;
  CHECK_FALSE(bitwise_equal(t, u));
  t[0] = NAN;
  CHECK_FALSE(t.all_finite());
}

// ---- optimizer ----

TEST_CASE("cosine_lr examples") {
  CHECK(cosine_lr(0, 100, 4e-4) == doctest::Approx(4e-4).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(100, 100, 4e-4)) <= 1e-20);
  CHECK(cosine_lr(50, 100, 4e-4) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(cosine_lr(150, 100, 4e-4) == cosine_lr(100, 100, 4e-4));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1.0), ContractViolation);
}

TEST_CASE("cosine_lr is nonincreasing") {
  for (std::size_t total : {1u, 7u, 100u, 937u}) {
    double prev = cosine_lr(0, total, 1.0);
    for (std::size_t s = 1; s <= total; ++s) {
      const double cur = cosine_lr(s, total, 1.0);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
}

TEST_CASE("sgd_momentum_step examples") {
  SUBCASE("plain step") {
    std::vector<Tensor> p = {Tensor::vector({1.0})};
    std::vector<Tensor> g = {Tensor::vector({1.0})};
    OptimizerState st = OptimizerState::for_params(p, 0.0, 0.1, 1);
    sgd_momentum_step(p, g, st, 0.1);
    CHECK(p[0][0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(st.step_index == 1);
  }
  SUBCASE("two momentum steps") {
    std::vector<Tensor> p = {Tensor::vector({0.0})};
    std::vector<Tensor> g = {Tensor::vector({1.0})};
    OptimizerState st = OptimizerState::for_params(p, 0.9, 1.0, 10);
    sgd_momentum_step(p, g, st, 1.0);
    CHECK(st.velocity[0][0] == 1.0);
    CHECK(p[0][0] == -1.0);
    sgd_momentum_step(p, g, st, 1.0);
    CHECK(st.velocity[0][0] == doctest::Approx(1.9).epsilon(1e-15));
    CHECK(p[0][0] == doctest::Approx(-2.9).epsilon(1e-15));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::mt19937_64 rng(2);
    std::vector<Tensor> p = {random_tensor({3, 2}, rng)};
    const Tensor before = p[0];
    std::vector<Tensor> g = {Tensor({3, 2})};
    OptimizerState st = OptimizerState::for_params(p, 0.7, 0.5, 4);
    sgd_momentum_step(p, g, st);
    CHECK(bitwise_equal(p[0], before));
  }
  SUBCASE("scheduled step uses cosine_lr at the current index") {
    std::vector<Tensor> p = {Tensor::vector({0.0})};
    std::vector<Tensor> g = {Tensor::vector({1.0})};
    OptimizerState st = OptimizerState::for_params(p, 0.0, 1.0, 4);
    st.step_index = 2;
    sgd_momentum_step(p, g, st);
    CHECK(p[0][0] == doctest::Approx(-cosine_lr(2, 4, 1.0)).epsilon(1e-15));
    CHECK(st.step_index == 3);
  }
  SUBCASE("shape mismatch") {
    std::vector<Tensor> p = {Tensor::vector({0.0, 1.0})};
    std::vector<Tensor> g = {Tensor::vector({1.0})};
    OptimizerState st = OptimizerState::for_params(p, 0.0, 1.0, 4);
    CHECK_THROWS_AS(sgd_momentum_step(p, g, st), ContractViolation);
  }
}
