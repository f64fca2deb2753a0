#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "canet/gradcheck.hpp"
#include "canet/rng.hpp"
#include "canet/tape.hpp"

using namespace canet;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

// Gradient-check a tape program over named parameter tensors.
GradCheckReport check_program(const std::function<Var(Tape&, std::vector<Var>&)>& build,
                              std::vector<GradCheckTarget> targets, double eps = 1e-5,
                              double tol = 1e-4) {
  auto loss_fn = [&]() {
    Tape tape;
    std::vector<Var> vars;
    Var loss = build(tape, vars);
    return tape.value(loss).item();
  };
  auto grad_fn = [&]() {
    Tape tape;
    std::vector<Var> vars;
    Var loss = build(tape, vars);
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (Var v : vars) grads.push_back(tape.grad(v));
    return grads;
  };
  return gradcheck(loss_fn, grad_fn, targets, eps, tol);
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  Tape tape;
  Var id = tape.leaf(Tensor::matrix({{1, 0}, {0, 1}}));
  Var v = tape.leaf(Tensor::matrix({{3}, {4}}));
  CHECK(tape.value(tape.matmul(id, v)) == Tensor::matrix({{3}, {4}}));

  Var a = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  Var ones = tape.leaf(Tensor::matrix({{1}, {1}}));
  CHECK(tape.value(tape.matmul(a, ones)) == Tensor::matrix({{3}, {7}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  Var a = tape.leaf(Tensor(2, 3));
  Var b = tape.leaf(Tensor(2, 2));
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random 3-chains") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Var a = tape.leaf(random_tensor(3, 4, rng));
    Var b = tape.leaf(random_tensor(4, 5, rng));
    Var c = tape.leaf(random_tensor(5, 2, rng));
    const Tensor left = tape.value(tape.matmul(tape.matmul(a, b), c));
    const Tensor right = tape.value(tape.matmul(a, tape.matmul(b, c)));
    for (std::size_t i = 0; i < left.size(); ++i) {
      double denom = std::max(1.0, std::abs(left[i]));
      CHECK(std::abs(left[i] - right[i]) / denom < 1e-9);
    }
  }
}

TEST_CASE("matmul_stable matches matmul") {
  Rng rng(4);
  Tape tape;
  Var a = tape.leaf(random_tensor(4, 6, rng));
  Var b = tape.leaf(random_tensor(6, 3, rng));
  const Tensor plain = tape.value(tape.matmul(a, b));
  const Tensor stable = tape.value(tape.matmul_stable(a, b));
  CHECK(approx_equal(plain, stable, 1e-12));
}

TEST_CASE("softmax examples") {
  Tape tape;
  Var z = tape.leaf(Tensor::row({0, 0}));
  CHECK(tape.value(tape.softmax(z, Axis::rows)) == Tensor::row({0.5, 0.5}));

  Var x = tape.leaf(Tensor::row({1, 2, 3}));
  const Tensor& y = tape.value(tape.softmax(x, Axis::rows));
  CHECK(std::abs(y[0] - 0.09003) < 1e-5);
  CHECK(std::abs(y[1] - 0.24473) < 1e-5);
  CHECK(std::abs(y[2] - 0.66524) < 1e-5);

  Var big = tape.leaf(Tensor::row({1000, 0}));
  const Tensor& s = tape.value(tape.softmax(big, Axis::rows));
  CHECK(s.all_finite());
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax slices sum to 1 and stay in [0,1] on random input") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6);
    Var x = tape.leaf(random_tensor(m, n, rng, 10.0));
    for (Axis axis : {Axis::rows, Axis::cols, Axis::flat}) {
      const Tensor& y = tape.value(tape.softmax(x, axis));
      for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] >= 0.0);
        CHECK(y[i] <= 1.0);
      }
      if (axis == Axis::rows) {
        for (std::size_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += y.at(i, j);
          CHECK(std::abs(s - 1.0) < 1e-12);
        }
      } else if (axis == Axis::cols) {
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i) s += y.at(i, j);
          CHECK(std::abs(s - 1.0) < 1e-12);
        }
      } else {
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i];
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("elementwise examples") {
  Tape tape;
  CHECK(tape.value(tape.tanh(tape.leaf(Tensor::scalar(0)))).item() == 0.0);
  CHECK(tape.value(tape.sigmoid(tape.leaf(Tensor::scalar(0)))).item() == 0.5);
  Var a = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = tape.leaf(Tensor::matrix({{2, 0}, {0, 2}}));
  CHECK(tape.value(tape.mul(a, b)) == Tensor::matrix({{2, 0}, {0, 8}}));
  Var bad = tape.leaf(Tensor(3, 3));
  CHECK_THROWS_AS(tape.add(a, bad), ShapeError);
}

TEST_CASE("broadcast add and mul") {
  Tape tape;
  Var m = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  Var row = tape.leaf(Tensor::row({10, 20}));
  Var col = tape.leaf(Tensor::column({100, 200}));
  CHECK(tape.value(tape.add(m, row)) == Tensor::matrix({{11, 22}, {13, 24}}));
  CHECK(tape.value(tape.add(m, col)) == Tensor::matrix({{101, 102}, {203, 204}}));
  CHECK(tape.value(tape.mul(m, row)) == Tensor::matrix({{10, 40}, {30, 80}}));
  CHECK(tape.value(tape.mul(col, m)) == Tensor::matrix({{100, 200}, {600, 800}}));
}

TEST_CASE("backward basics") {
  SUBCASE("sum gradient is ones") {
    Tape tape;
    Var w = tape.leaf(Tensor::row({1, 2, 3}), true);
    Var loss = tape.sum(w);
    tape.backward(loss);
    CHECK(tape.grad(w) == Tensor::row({1, 1, 1}));
  }
  SUBCASE("quadratic gradient") {
    Tape tape;
    Var w = tape.leaf(Tensor::row({1, 2}), true);
    Var loss = tape.sum(tape.mul(w, w));
    tape.backward(loss);
    CHECK(tape.grad(w) == Tensor::row({2, 4}));
  }
  SUBCASE("unreached parameter gets exact zero") {
    Tape tape;
    Var w = tape.leaf(Tensor::row({1, 2}), true);
    Var unused = tape.leaf(Tensor::row({5, 6}), true);
    Var loss = tape.sum(w);
    tape.backward(loss);
    CHECK(tape.grad(unused) == Tensor::row({0, 0}));
  }
  SUBCASE("two uses of one parameter accumulate") {
    Tape tape;
    Var w = tape.leaf(Tensor::row({3}), true);
    Var loss = tape.sum(tape.add(w, w));
    tape.backward(loss);
    CHECK(tape.grad(w).item() == 2.0);
  }
  SUBCASE("non-scalar loss rejected") {
    Tape tape;
    Var w = tape.leaf(Tensor::row({1, 2}), true);
    CHECK_THROWS_AS(tape.backward(w), ShapeError);
  }
}

TEST_CASE("tape reuse after reset is bitwise stable") {
  Rng rng(11);
  Tensor a = random_tensor(5, 4, rng);
  Tensor b = random_tensor(4, 3, rng);
  Tape tape;
  auto run = [&]() {
    tape.reset();
    Var va = tape.leaf(a, true);
    Var vb = tape.leaf(b, true);
    Var loss = tape.sum(tape.tanh(tape.matmul(va, vb)));
    tape.backward(loss);
    return std::make_pair(tape.value(loss), tape.grad(va));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(bitwise_equal(l1, l2));
  CHECK(bitwise_equal(g1, g2));
}

TEST_CASE("gradcheck quadratic") {
  Tensor w = Tensor::scalar(2.0);
  auto report = check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        Var wv = tape.leaf(w, true);
        vars.push_back(wv);
        return tape.sum(tape.mul(wv, wv));
      },
      {{"w", &w}});
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("gradcheck constant function is exactly zero") {
  Tensor w = Tensor::row({1, 2, 3});
  Tensor c = Tensor::scalar(5.0);
  auto loss_fn = [&]() { return c.item(); };
  auto grad_fn = [&]() { return std::vector<Tensor>{Tensor(1, 3)}; };
  GradCheckTarget targets[] = {{"w", &w}};
  auto report = gradcheck(loss_fn, grad_fn, targets);
  CHECK(report.pass);
  CHECK(report.max_rel_err == 0.0);
}

TEST_CASE("gradcheck composite ops") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(seed + 100);
    Tensor a = random_tensor(3, 4, r);
    Tensor b = random_tensor(4, 2, r);
    Tensor c = random_tensor(1, 2, r);
    auto report = check_program(
        [&](Tape& tape, std::vector<Var>& vars) {
          Var va = tape.leaf(a, true);
          Var vb = tape.leaf(b, true);
          Var vc = tape.leaf(c, true);
          vars = {va, vb, vc};
          Var h = tape.tanh(tape.add(tape.matmul(va, vb), vc));
          Var s = tape.softmax(h, Axis::rows);
          Var r1 = tape.relu(tape.add(s, vc));
          Var m = tape.mean_rows(tape.sigmoid(r1));
          Var t = tape.transpose(tape.concat_rows(std::vector<Var>{m, vc}));
          return tape.sum(tape.mul(t, t));
        },
        {{"a", &a}, {"b", &b}, {"c", &c}});
    INFO(report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("gradcheck slicing, concat and cross entropy") {
  Rng r(17);
  Tensor a = random_tensor(4, 4, r);
  auto report = check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        Var va = tape.leaf(a, true);
        vars = {va};
        Var row = tape.slice_row(va, 1);                              // 1x4
        Var cols = tape.slice_cols(va, 1, 2);                         // 4x2
        Var theta = tape.concat_cols(std::vector<Var>{tape.transpose(row), cols});  // 4x3
        Var probs = tape.softmax(tape.reshape(theta, 1, 12), Axis::rows);
        return tape.cross_entropy(probs, 3);
      },
      {{"a", &a}});
  INFO(report.summary());
  CHECK(report.pass);
}

TEST_CASE("cross entropy label out of range") {
  Tape tape;
  Var p = tape.leaf(Tensor::row({0.5, 0.5}));
  CHECK_THROWS_AS(tape.cross_entropy(p, 2), std::out_of_range);
}
