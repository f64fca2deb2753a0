#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "canet/data.hpp"
#include "canet/gradcheck.hpp"
#include "canet/layers.hpp"
#include "canet/rng.hpp"

using namespace canet;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

GradCheckReport check_program(const std::function<Var(Tape&, std::vector<Var>&)>& build,
                              std::vector<GradCheckTarget> targets, double eps = 1e-5,
                              double tol = 1e-4) {
  auto loss_fn = [&]() {
    Tape tape;
    std::vector<Var> vars;
    return tape.value(build(tape, vars)).item();
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

std::vector<GradCheckTarget> targets_of(LstmStackParams& p) {
  std::vector<GradCheckTarget> t;
  p.visit("lstm", [&](const std::string& name, Tensor& x) { t.push_back({name, &x}); });
  return t;
}

}  // namespace

TEST_CASE("lstm with zero parameters emits zeros") {
  LstmStackParams p = LstmStackParams::make(3, 4, 3, true);
  Tape tape;
  auto vars = stage(tape, p);
  Rng rng(1);
  Var x = tape.leaf(random_tensor(6, 3, rng));
  const Tensor& h = tape.value(lstm_forward(tape, vars, x, 4));
  CHECK(h.rows() == 6);
  CHECK(h.cols() == 4);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == 0.0);
}

TEST_CASE("lstm T=1 equals a single cell application") {
  Rng rng(5);
  LstmStackParams p = LstmStackParams::make(3, 2, 1, false);
  p.init(rng);
  Tensor x = random_tensor(1, 3, rng);

  Tape tape;
  auto vars = stage(tape, p);
  const Tensor& h = tape.value(lstm_forward(tape, vars, tape.leaf(x), 2));

  // independent single-step re-evaluation
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t j = 0; j < 2; ++j) {
    auto gate = [&](std::size_t block) {
      double z = p.layers[0].bias[block * 2 + j];
      for (std::size_t e = 0; e < 3; ++e)
        z += x[e] * p.layers[0].input_weights.at(e, block * 2 + j);
      return z;
    };
    double i_g = sig(gate(0)), g_g = std::tanh(gate(2)), o_g = sig(gate(3));
    double expected = o_g * std::tanh(i_g * g_g);
    CHECK(h[j] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("lstm input width mismatch") {
  LstmStackParams p = LstmStackParams::make(3, 4, 2, false);
  Tape tape;
  auto vars = stage(tape, p);
  Var x = tape.leaf(Tensor(5, 2));
  CHECK_THROWS_AS(lstm_forward(tape, vars, x, 4), ShapeError);
}

TEST_CASE("lstm gradcheck over random params and input") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    LstmStackParams p = LstmStackParams::make(3, 4, 3, true);
    p.init(rng);
    Tensor x = random_tensor(5, 3, rng);
    auto targets = targets_of(p);
    targets.push_back({"x", &x});
    auto report = check_program(
        [&](Tape& tape, std::vector<Var>& vars) {
          auto staged = stage(tape, p);
          for (auto& l : staged) {
            vars.push_back(l.input_weights);
            vars.push_back(l.recurrent_weights);
            vars.push_back(l.bias);
          }
          Var xv = tape.leaf(x, true);
          vars.push_back(xv);
          Var h = lstm_forward(tape, staged, xv, 4);
          return tape.sum(tape.tanh(h));
        },
        targets);
    INFO(report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("temporal attention zero weights give the column mean") {
  Rng rng(9);
  Tensor h = random_tensor(5, 3, rng);
  Tensor w(3, 1);
  Tape tape;
  auto res = temporal_attention(tape, tape.leaf(h), tape.leaf(w));
  const Tensor& a = tape.value(res.scores);
  for (std::size_t t = 0; t < 5; ++t) CHECK(a[t] == doctest::Approx(0.2).epsilon(1e-12));
  const Tensor& theta = tape.value(res.summary);
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (std::size_t t = 0; t < 5; ++t) mean += h.at(t, k);
    mean /= 5.0;
    CHECK(theta[k] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("temporal attention hand example") {
  Tape tape;
  Var h = tape.leaf(Tensor::matrix({{1}, {3}}));
  Var w = tape.leaf(Tensor::column({1}));
  auto res = temporal_attention(tape, h, w);
  const Tensor& a = tape.value(res.scores);
  CHECK(std::abs(a[0] - 0.11920) < 1e-4);
  CHECK(std::abs(a[1] - 0.88080) < 1e-4);
  CHECK(std::abs(tape.value(res.summary).item() - 2.7616) < 1e-4);
}

TEST_CASE("temporal attention T=1") {
  Tape tape;
  Var h = tape.leaf(Tensor::matrix({{2, -1, 4}}));
  Var w = tape.leaf(Tensor::column({0.3, -0.2, 0.5}));
  auto res = temporal_attention(tape, h, w);
  CHECK(tape.value(res.scores).item() == 1.0);
  const Tensor& theta = tape.value(res.summary);
  CHECK(theta == Tensor::column({2, -1, 4}));
}

TEST_CASE("temporal attention properties: normalization and convex hull") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::size_t T = 2 + rng.below(8), K = 1 + rng.below(5);
    Tensor h = random_tensor(T, K, rng, 3.0);
    Tensor w = random_tensor(K, 1, rng, 2.0);
    Tape tape;
    auto res = temporal_attention(tape, tape.leaf(h), tape.leaf(w));
    const Tensor& a = tape.value(res.scores);
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      CHECK(a[t] >= 0.0);
      s += a[t];
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    const Tensor& theta = tape.value(res.summary);
    for (std::size_t k = 0; k < K; ++k) {
      double lo = h.at(0, k), hi = h.at(0, k);
      for (std::size_t t = 1; t < T; ++t) {
        lo = std::min(lo, h.at(t, k));
        hi = std::max(hi, h.at(t, k));
      }
      CHECK(theta[k] >= lo - 1e-12);
      CHECK(theta[k] <= hi + 1e-12);
    }
  }
}

TEST_CASE("temporal attention gradcheck") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 31);
    Tensor h = random_tensor(6, 4, rng);
    Tensor w = random_tensor(4, 1, rng);
    auto report = check_program(
        [&](Tape& tape, std::vector<Var>& vars) {
          Var hv = tape.leaf(h, true);
          Var wv = tape.leaf(w, true);
          vars = {hv, wv};
          auto res = temporal_attention(tape, hv, wv);
          return tape.sum(tape.mul(res.summary, res.summary));
        },
        {{"H", &h}, {"w", &w}});
    INFO(report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("component attention with zero parameters is uniform") {
  Rng rng(13);
  std::size_t K = 4, C = 5;
  Tensor theta = random_tensor(K, C, rng);
  ComponentAttentionParams p = ComponentAttentionParams::make(C, C);
  Tape tape;
  auto res = component_attention(tape, tape.leaf(theta), stage(tape, p));
  const Tensor& b = tape.value(res.map);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == doctest::Approx(0.2).epsilon(1e-12));
  const Tensor& o = tape.value(res.weighted);
  for (std::size_t i = 0; i < o.size(); ++i)
    CHECK(o[i] == doctest::Approx(theta[i] / 5.0).epsilon(1e-12));
}

TEST_CASE("component attention with a single component") {
  Rng rng(14);
  Tensor theta = random_tensor(3, 1, rng);
  ComponentAttentionParams p = ComponentAttentionParams::make(1, 1);
  p.init(rng);
  Tape tape;
  auto res = component_attention(tape, tape.leaf(theta), stage(tape, p));
  const Tensor& b = tape.value(res.map);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == 1.0);
  CHECK(approx_equal(tape.value(res.weighted), theta, 0.0));
}

TEST_CASE("component attention against step-by-step re-evaluation") {
  Rng rng(15);
  std::size_t K = 2, C = 3, D = 3;
  Tensor theta = random_tensor(K, C, rng);
  ComponentAttentionParams p = ComponentAttentionParams::make(C, D);
  p.init(rng);
  Tape tape;
  auto res = component_attention(tape, tape.leaf(theta), stage(tape, p));
  const Tensor& b = tape.value(res.map);

  for (std::size_t k = 0; k < K; ++k) {
    // hidden = tanh(theta_row * W1 + b1)
    std::vector<double> hidden(D);
    for (std::size_t d = 0; d < D; ++d) {
      double z = p.b1[d];
      for (std::size_t c = 0; c < C; ++c) z += theta.at(k, c) * p.W1.at(c, d);
      hidden[d] = std::tanh(z);
    }
    std::vector<double> logits(C);
    for (std::size_t c = 0; c < C; ++c) {
      double z = p.b2[c];
      for (std::size_t d = 0; d < D; ++d) z += hidden[d] * p.W2.at(d, c);
      logits[c] = z;
    }
    double mx = std::max({logits[0], logits[1], logits[2]});
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l - mx);
    double row_sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      double expected = std::exp(logits[c] - mx) / denom;
      CHECK(std::abs(b.at(k, c) - expected) < 1e-12);
      row_sum += b.at(k, c);
    }
    CHECK(std::abs(row_sum - 1.0) < 1e-12);
  }
}

TEST_CASE("component attention map stays in [0,1] with unit row sums") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 7);
    std::size_t K = 1 + rng.below(5), C = 1 + rng.below(6);
    Tensor theta = random_tensor(K, C, rng, 2.0);
    ComponentAttentionParams p = ComponentAttentionParams::make(C, C);
    p.init(rng);
    Tape tape;
    auto res = component_attention(tape, tape.leaf(theta), stage(tape, p));
    const Tensor& b = tape.value(res.map);
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        CHECK(b.at(k, c) >= 0.0);
        CHECK(b.at(k, c) <= 1.0);
        s += b.at(k, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("component attention gradcheck") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 11);
    std::size_t K = 3, C = 4, D = 2;
    Tensor theta = random_tensor(K, C, rng);
    ComponentAttentionParams p = ComponentAttentionParams::make(C, D);
    p.init(rng);
    std::vector<GradCheckTarget> targets = {{"theta", &theta}};
    p.visit("cattn", [&](const std::string& n, Tensor& t) { targets.push_back({n, &t}); });
    auto report = check_program(
        [&](Tape& tape, std::vector<Var>& vars) {
          Var tv = tape.leaf(theta, true);
          auto staged = stage(tape, p);
          vars = {tv, staged.W1, staged.b1, staged.W2, staged.b2};
          auto res = component_attention(tape, tv, staged);
          return tape.sum(tape.mul(res.weighted, res.weighted));
        },
        targets);
    INFO(report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("classifier head flattens column-major") {
  Tape tape;
  Var o = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  // vec(O) = [1,3,2,4]: identity weights hand the flattened vector through
  Tensor w(4, 4);
  for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0;
  Var flat = tape.matmul(tape.reshape(tape.transpose(o), 1, 4), tape.leaf(w));
  CHECK(tape.value(flat) == Tensor::row({1, 3, 2, 4}));

  Var p = classifier_head(tape, o, tape.leaf(Tensor(4, 2)), tape.leaf(Tensor(1, 2)));
  CHECK(tape.value(p) == Tensor::row({0.5, 0.5}));
}

TEST_CASE("classifier head probabilities sum to one") {
  Rng rng(23);
  Tensor o = random_tensor(3, 2, rng);
  Tensor w = random_tensor(6, 2, rng);
  Tensor b = random_tensor(1, 2, rng);
  Tape tape;
  Var p = classifier_head(tape, tape.leaf(o), tape.leaf(w), tape.leaf(b));
  const Tensor& probs = tape.value(p);
  CHECK(std::abs(probs[0] + probs[1] - 1.0) < 1e-12);
}

TEST_CASE("classifier head gradcheck") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 13);
    Tensor o = random_tensor(3, 2, rng);
    Tensor w = random_tensor(6, 3, rng);
    Tensor b = random_tensor(1, 3, rng);
    auto report = check_program(
        [&](Tape& tape, std::vector<Var>& vars) {
          Var ov = tape.leaf(o, true);
          Var wv = tape.leaf(w, true);
          Var bv = tape.leaf(b, true);
          vars = {ov, wv, bv};
          Var p = classifier_head(tape, ov, wv, bv);
          return tape.cross_entropy(p, 1);
        },
        {{"O", &o}, {"W3", &w}, {"b3", &b}});
    INFO(report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("gcn layer hand cases") {
  Tape tape;
  Var a_hat = tape.leaf(Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}}));
  Var x = tape.leaf(Tensor::matrix({{1}, {3}}));
  Var w = tape.leaf(Tensor::matrix({{1}}));
  CHECK(tape.value(gcn_layer(tape, x, w, a_hat)) == Tensor::matrix({{2}, {2}}));

  // edgeless graph (self-loops only) with identity weights reduces to relu
  Var eye = tape.leaf(Tensor::matrix({{1, 0}, {0, 1}}));
  Var x2 = tape.leaf(Tensor::matrix({{-1, 2}, {3, -4}}));
  Var w2 = tape.leaf(Tensor::matrix({{1, 0}, {0, 1}}));
  CHECK(tape.value(gcn_layer(tape, x2, w2, eye)) == Tensor::matrix({{0, 2}, {3, 0}}));
}

TEST_CASE("gcn layer vertex mismatch") {
  Tape tape;
  Var a_hat = tape.leaf(BodyGraph::body().adjacency);
  Var x = tape.leaf(Tensor(5, 3));
  Var w = tape.leaf(Tensor(3, 4));
  CHECK_THROWS_AS(gcn_layer(tape, x, w, a_hat), ShapeError);
}

TEST_CASE("three stacked gcn layers pass gradcheck") {
  const Tensor& a_hat = BodyGraph::body().adjacency;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 17);
    GcnStackParams p = GcnStackParams::make(3, 5, 3);
    p.init(rng);
    Tensor x = random_tensor(BodyGraph::vertex_count, 3, rng);
    std::vector<GradCheckTarget> targets = {{"x", &x}};
    p.visit("gcn", [&](const std::string& n, Tensor& t) { targets.push_back({n, &t}); });
    auto report = check_program(
        [&](Tape& tape, std::vector<Var>& vars) {
          Var xv = tape.leaf(x, true);
          auto staged = stage(tape, p);
          vars = {xv};
          for (Var w : staged) vars.push_back(w);
          Var h = xv;
          Var av = tape.leaf(a_hat);
          for (Var w : staged) h = gcn_layer(tape, h, w, av);
          return tape.sum(tape.mul(h, h));
        },
        targets);
    INFO(report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("body graph normalization spot value") {
  const Tensor& a_hat = BodyGraph::body().adjacency;
  CHECK(std::abs(a_hat.at(0, 1) - 0.28868) < 1e-5);
  CHECK(a_hat.at(1, 1) == 0.5);
}

TEST_CASE("cross entropy values") {
  Tape tape;
  CHECK(tape.value(cross_entropy(tape, tape.leaf(Tensor::row({1, 0})), 0)).item() == 0.0);
  double ln2 = tape.value(cross_entropy(tape, tape.leaf(Tensor::row({0.5, 0.5})), 0)).item();
  CHECK(std::abs(ln2 - 0.69315) < 1e-5);
  Var p = tape.leaf(Tensor::row({0.09003, 0.24473, 0.66524}));
  CHECK(std::abs(tape.value(cross_entropy(tape, p, 2)).item() - 0.40761) < 1e-4);
}

TEST_CASE("component permutation equivariance is bitwise") {
  Rng rng(29);
  std::size_t K = 3, C = 5, D = 4, N = 2;
  Tensor theta = random_tensor(K, C, rng);
  ComponentAttentionParams p = ComponentAttentionParams::make(C, D);
  p.init(rng);
  Tensor w3 = random_tensor(K * C, N, rng);
  Tensor b3 = random_tensor(1, N, rng);

  auto forward = [&](const Tensor& th, ComponentAttentionParams& cp, const Tensor& w,
                     const Tensor& b) {
    Tape tape;
    auto res = component_attention(tape, tape.leaf(th), stage(tape, cp));
    Var probs = classifier_head(tape, res.weighted, tape.leaf(w), tape.leaf(b));
    return tape.value(probs);
  };
  Tensor base = forward(theta, p, w3, b3);

  std::vector<std::size_t> perm = {3, 0, 4, 2, 1};
  Tensor theta_p(K, C);
  ComponentAttentionParams pp = ComponentAttentionParams::make(C, D);
  pp.b1 = p.b1;
  Tensor w3_p(K * C, N);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t src = perm[c];
    for (std::size_t k = 0; k < K; ++k) theta_p.at(k, c) = theta.at(k, src);
    for (std::size_t d = 0; d < D; ++d) {
      pp.W1.at(c, d) = p.W1.at(src, d);
      pp.W2.at(d, c) = p.W2.at(d, src);
    }
    pp.b2[c] = p.b2[src];
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t n = 0; n < N; ++n) w3_p.at(c * K + k, n) = w3.at(src * K + k, n);
  }
  Tensor permuted = forward(theta_p, pp, w3_p, b3);
  CHECK(bitwise_equal(base, permuted));
}
