#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "canet/rng.hpp"
#include "canet/train.hpp"

using namespace canet;

namespace {

Registry tiny_registry() {
  return Registry({{"a", 2, Modality::imu}, {"b", 2, Modality::imu}});
}

// 10 segments of 10 frames; class 1 carries a constant offset on "a".
std::vector<Segment> overfit_segments(std::shared_ptr<const Registry> reg) {
  Rng rng(55);
  std::vector<Segment> segs;
  segs.reserve(10);
  for (std::size_t i = 0; i < 10; ++i) {
    Segment seg;
    seg.id = "s" + std::to_string(i);
    seg.label = i % 2;
    seg.registry = reg;
    seg.frames = Tensor(10, reg->total_width());
    for (std::size_t k = 0; k < seg.frames.size(); ++k) seg.frames[k] = rng.uniform(-0.5, 0.5);
    if (seg.label == 1)
      for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t c = 0; c < 2; ++c) seg.frames.at(t, c) += 1.5;
    segs.push_back(std::move(seg));
  }
  return segs;
}

std::vector<Window> whole_windows(const std::vector<Segment>& segs) {
  std::vector<Window> out;
  for (const auto& s : segs) out.push_back({&s, 0, s.frames.rows()});
  return out;
}

std::vector<Tensor> snapshot(Model& model) {
  std::vector<Tensor> out;
  model.visit_params([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

bool same_params(Model& model, const std::vector<Tensor>& snap) {
  bool equal = true;
  std::size_t i = 0;
  model.visit_params([&](const std::string&, Tensor& t) {
    if (!bitwise_equal(t, snap[i])) equal = false;
    ++i;
  });
  return equal;
}

}  // namespace

TEST_CASE("adam leaves parameters alone on zero gradients") {
  Tensor w = Tensor::row({1.0, -2.0, 3.0});
  Tensor g(1, 3);
  AdamState state;
  state.m.emplace_back(1, 3);
  state.v.emplace_back(1, 3);
  TrainConfig config;
  std::vector<Tensor*> params = {&w};
  std::vector<Tensor> grads = {g};
  adam_step(params, grads, state, config);
  CHECK(w == Tensor::row({1.0, -2.0, 3.0}));
}

TEST_CASE("adam first step moves by about lr against the gradient sign") {
  Tensor w = Tensor::row({1.0, 1.0});
  Tensor g = Tensor::row({42.0, -0.37});
  AdamState state;
  state.m.emplace_back(1, 2);
  state.v.emplace_back(1, 2);
  TrainConfig config;
  config.learning_rate = 0.1;
  std::vector<Tensor*> params = {&w};
  std::vector<Tensor> grads = {g};
  adam_step(params, grads, state, config);
  CHECK(std::abs(w[0] - (1.0 - 0.1)) < 1e-6);
  CHECK(std::abs(w[1] - (1.0 + 0.1)) < 1e-6);
  CHECK(state.step == 1);
}

TEST_CASE("adam matches a brute-force reimplementation") {
  Rng rng(77);
  Tensor w(3, 2);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1, 1);
  Tensor w_ref = w;
  double m[6] = {0}, v[6] = {0};
  AdamState state;
  state.m.emplace_back(3, 2);
  state.v.emplace_back(3, 2);
  TrainConfig config;
  config.learning_rate = 0.03;
  std::vector<Tensor*> params = {&w};
  for (int t = 1; t <= 25; ++t) {
    Tensor g(3, 2);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(-2, 2);
    std::vector<Tensor> grads = {g};
    adam_step(params, grads, state, config);
    for (std::size_t i = 0; i < 6; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      double mhat = m[i] / (1.0 - std::pow(0.9, t));
      double vhat = v[i] / (1.0 - std::pow(0.999, t));
      w_ref[i] -= 0.03 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(w[i] - w_ref[i]) < 1e-12);
  }
}

TEST_CASE("adam rejects mismatched shapes") {
  Tensor w = Tensor::row({1.0});
  Tensor g(2, 2);
  AdamState state;
  state.m.emplace_back(1, 1);
  state.v.emplace_back(1, 1);
  TrainConfig config;
  std::vector<Tensor*> params = {&w};
  std::vector<Tensor> grads = {g};
  CHECK_THROWS_AS(adam_step(params, grads, state, config), std::invalid_argument);
}

TEST_CASE("metrics hand example") {
  std::vector<std::size_t> labels = {1, 0, 0, 0};
  std::vector<std::size_t> preds = {1, 1, 0, 0};
  Metrics m = compute_metrics(labels, preds, 2);
  CHECK(m.accuracy == 0.75);
  CHECK(std::abs(m.per_class[1].f1 - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(m.per_class[0].f1 - 0.8) < 1e-12);
  CHECK(std::abs(m.macro_f1 - 0.73333) < 1e-4);
  // confusion row sums equal per-class label counts
  CHECK(m.confusion[0][0] + m.confusion[0][1] == 3);
  CHECK(m.confusion[1][0] + m.confusion[1][1] == 1);
}

TEST_CASE("metrics on all-correct predictions") {
  std::vector<std::size_t> labels = {0, 1, 1, 0};
  Metrics m = compute_metrics(labels, labels, 2);
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_f1 == 1.0);
}

TEST_CASE("absent class is degenerate with zero F1") {
  std::vector<std::size_t> labels = {0, 0, 0};
  std::vector<std::size_t> preds = {0, 0, 0};
  Metrics m = compute_metrics(labels, preds, 2);
  CHECK(m.per_class[1].f1 == 0.0);
  CHECK(m.per_class[1].degenerate);
  CHECK(!m.per_class[0].degenerate);
}

TEST_CASE("metrics reject empty input") {
  std::vector<std::size_t> empty;
  CHECK_THROWS_AS(compute_metrics(empty, empty, 2), std::invalid_argument);
}

TEST_CASE("confusion row sums match label counts on random data") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 1 + rng.below(200), classes = 2 + rng.below(3);
    std::vector<std::size_t> labels(n), preds(n), counts(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.below(classes);
      preds[i] = rng.below(classes);
      counts[labels[i]]++;
    }
    Metrics m = compute_metrics(labels, preds, classes);
    for (std::size_t c = 0; c < classes; ++c) {
      std::size_t row = 0;
      for (std::size_t o = 0; o < classes; ++o) row += m.confusion[c][o];
      CHECK(row == counts[c]);
    }
  }
}

TEST_CASE("fit with zero epochs returns the initialized model untouched") {
  auto reg = std::make_shared<Registry>(tiny_registry());
  auto segs = overfit_segments(reg);
  auto windows = whole_windows(segs);
  ModelDims dims{.T = 10, .K = 3, .N = 2, .E = 2, .lstm_layers = 1};
  CANetModel model(CANetParams::make(*reg, dims));
  model.init(1);
  auto before = snapshot(model);
  TrainConfig config;
  config.epochs = 0;
  History h = fit(config, model, windows, windows);
  CHECK(h.epochs.empty());
  CHECK(same_params(model, before));
}

TEST_CASE("fit with zero learning rate leaves parameters bitwise unchanged") {
  auto reg = std::make_shared<Registry>(tiny_registry());
  auto segs = overfit_segments(reg);
  auto windows = whole_windows(segs);
  ModelDims dims{.T = 10, .K = 3, .N = 2, .E = 2, .lstm_layers = 1};
  CANetModel model(CANetParams::make(*reg, dims));
  model.init(1);
  auto before = snapshot(model);
  TrainConfig config;
  config.epochs = 3;
  config.learning_rate = 0.0;
  fit(config, model, windows, windows);
  CHECK(same_params(model, before));
}

TEST_CASE("fit is deterministic for a fixed config and seed") {
  auto reg = std::make_shared<Registry>(tiny_registry());
  auto segs = overfit_segments(reg);
  auto windows = whole_windows(segs);
  ModelDims dims{.T = 10, .K = 3, .N = 2, .E = 2, .lstm_layers = 1};
  TrainConfig config;
  config.epochs = 4;
  config.batch_size = 3;
  config.seed = 9;

  auto run = [&]() {
    CANetModel model(CANetParams::make(*reg, dims));
    model.init(config.seed);
    History h = fit(config, model, windows, windows);
    return history_to_json(h);
  };
  CHECK(run() == run());
}

TEST_CASE("fit overfits ten windows within 200 epochs") {
  auto reg = std::make_shared<Registry>(tiny_registry());
  auto segs = overfit_segments(reg);
  auto windows = whole_windows(segs);
  ModelDims dims{.T = 10, .K = 4, .N = 2, .E = 3, .lstm_layers = 2};
  CANetModel model(CANetParams::make(*reg, dims));
  model.init(3);
  TrainConfig config;
  config.epochs = 200;
  config.batch_size = 2;
  config.seed = 3;
  History h = fit(config, model, windows, windows);
  double best = 1e9;
  for (const auto& e : h.epochs) best = std::min(best, e.train_loss);
  CHECK(best < 0.05);
}

TEST_CASE("fit rejects empty training data") {
  auto reg = std::make_shared<Registry>(tiny_registry());
  auto segs = overfit_segments(reg);
  auto windows = whole_windows(segs);
  ModelDims dims{.T = 10, .K = 3, .N = 2, .E = 2, .lstm_layers = 1};
  CANetModel model(CANetParams::make(*reg, dims));
  std::vector<Window> empty;
  TrainConfig config;
  CHECK_THROWS_AS(fit(config, model, empty, windows), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(model, empty), std::invalid_argument);
}

TEST_CASE("history json carries the config echo and final confusion") {
  auto reg = std::make_shared<Registry>(tiny_registry());
  auto segs = overfit_segments(reg);
  auto windows = whole_windows(segs);
  ModelDims dims{.T = 10, .K = 3, .N = 2, .E = 2, .lstm_layers = 1};
  CANetModel model(CANetParams::make(*reg, dims));
  model.init(2);
  TrainConfig config;
  config.epochs = 1;
  History h = fit(config, model, windows, windows);
  std::string json = history_to_json(h);
  CHECK(json.find("\"learning_rate\": 0.001") != std::string::npos);
  CHECK(json.find("\"batch_size\": 16") != std::string::npos);
  CHECK(json.find("\"model\": \"canet\"") != std::string::npos);
  CHECK(json.find("\"confusion\"") != std::string::npos);
  CHECK(json.find("\"train_loss\"") != std::string::npos);
}
