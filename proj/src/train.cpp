#include "canet/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "canet/rng.hpp"

namespace canet {

using nlohmann::json;

AdamState AdamState::make(Model& model) {
  AdamState state;
  model.visit_params([&](const std::string&, Tensor& t) {
    state.m.emplace_back(t.rows(), t.cols());
    state.v.emplace_back(t.rows(), t.cols());
  });
  return state;
}

void adam_step(std::span<Tensor*> params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters, " +
                                std::to_string(grads.size()) + " gradients, " +
                                std::to_string(state.m.size()) + " moment tensors");
  ++state.step;
  double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const Tensor& g = grads[p];
    if (g.shape() != theta.shape())
      throw std::invalid_argument("adam_step: gradient " + shape_str(g.shape()) +
                                  " against parameter " + shape_str(theta.shape()));
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      theta[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

Metrics compute_metrics(std::span<const std::size_t> labels, std::span<const std::size_t> preds,
                        std::size_t num_classes) {
  if (labels.size() != preds.size() || labels.empty())
    throw std::invalid_argument("compute_metrics needs matching, nonempty label/prediction lists");
  Metrics m;
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || preds[i] >= num_classes)
      throw std::invalid_argument("class index out of range in compute_metrics");
    m.confusion[labels[i]][preds[i]]++;
    if (labels[i] == preds[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  m.per_class.resize(num_classes);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = m.confusion[c][c];
    std::size_t fn = 0, fp = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fn += m.confusion[c][o];
      fp += m.confusion[o][c];
    }
    ClassMetrics& cm = m.per_class[c];
    cm.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    cm.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    cm.f1 = (cm.precision + cm.recall) > 0.0
                ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall)
                : 0.0;
    cm.degenerate = (tp + fn + fp) == 0;
    f1_sum += cm.f1;
  }
  m.macro_f1 = f1_sum / static_cast<double>(num_classes);
  return m;
}

Metrics evaluate(const Classifier& model, std::span<const Window> windows) {
  if (windows.empty()) throw std::invalid_argument("evaluate: empty window list");
  check_registry(model, windows.front().registry());
  std::vector<std::size_t> labels, preds;
  labels.reserve(windows.size());
  preds.reserve(windows.size());
  for (const Window& w : windows) {
    labels.push_back(w.label());
    preds.push_back(model.predict(w).predicted_class());
  }
  return compute_metrics(labels, preds, model.num_classes());
}

Metrics evaluate_with(Model& model, std::span<const Window> windows,
                      std::vector<std::size_t>* predictions) {
  if (windows.empty()) throw std::invalid_argument("evaluate: empty window list");
  check_registry(model, windows.front().registry());
  Tape tape;
  std::vector<std::size_t> labels, preds;
  labels.reserve(windows.size());
  preds.reserve(windows.size());
  for (const Window& w : windows) {
    labels.push_back(w.label());
    preds.push_back(model.predict_with(tape, w).predicted_class());
  }
  if (predictions) *predictions = preds;
  return compute_metrics(labels, preds, model.num_classes());
}

namespace {

json metrics_json(const Metrics& m) {
  json per_class = json::array();
  for (const auto& c : m.per_class)
    per_class.push_back({{"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"degenerate", c.degenerate}});
  return {{"accuracy", m.accuracy},
          {"macro_f1", m.macro_f1},
          {"per_class", per_class},
          {"confusion", m.confusion}};
}

json config_json(const TrainConfig& c, const std::string& kind) {
  return {{"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"stop_accuracy", c.stop_accuracy},
          {"model", kind}};
}

}  // namespace

std::string metrics_to_json(const Metrics& metrics) { return metrics_json(metrics).dump(2); }

std::string history_to_json(const History& history) {
  json epochs = json::array();
  for (const auto& e : history.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"test_accuracy", e.test_accuracy},
                      {"test_macro_f1", e.test_macro_f1}});
  json j = {{"config", config_json(history.config, history.model_kind)},
            {"epochs", epochs},
            {"final", metrics_json(history.final_metrics)}};
  return j.dump(2);
}

History fit(const TrainConfig& config, Model& model, std::span<const Window> train,
            std::span<const Window> test) {
  if (train.empty()) throw std::invalid_argument("fit: empty training set");
  if (test.empty()) throw std::invalid_argument("fit: empty test set");
  History history;
  history.model_kind = model.kind();
  history.config = config;

  std::vector<Tensor*> params;
  model.visit_params([&](const std::string&, Tensor& t) { params.push_back(&t); });
  AdamState state = AdamState::make(model);
  std::vector<Tensor> grad_sum(params.size());
  for (std::size_t p = 0; p < params.size(); ++p)
    grad_sum[p] = Tensor(params[p]->rows(), params[p]->cols());

  Rng shuffle_rng = Rng(config.seed).derive(kShuffleStream);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Tape tape;
  std::vector<Var> param_vars;
  bool evaluated = false;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += config.batch_size) {
      std::size_t batch_end = std::min(order.size(), batch_start + config.batch_size);
      // Accumulation order is fixed by window index, independent of the
      // shuffle, so a batch's gradient is a pure function of its membership.
      std::vector<std::size_t> batch(order.begin() + batch_start, order.begin() + batch_end);
      std::sort(batch.begin(), batch.end());
      for (auto& g : grad_sum) g.fill(0.0);
      for (std::size_t idx : batch) {
        Var loss = model.build_loss(tape, train[idx], param_vars);
        double value = tape.value(loss).item();
        if (!std::isfinite(value))
          throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch));
        loss_sum += value;
        tape.backward(loss);
        for (std::size_t p = 0; p < param_vars.size(); ++p) {
          const Tensor& g = tape.grad(param_vars[p]);
          for (std::size_t i = 0; i < g.size(); ++i) grad_sum[p][i] += g[i];
        }
      }
      double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& g : grad_sum)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv;
      adam_step(params, grad_sum, state, config);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    Metrics metrics = evaluate_with(model, test);
    record.test_accuracy = metrics.accuracy;
    record.test_macro_f1 = metrics.macro_f1;
    history.epochs.push_back(record);
    history.final_metrics = std::move(metrics);
    evaluated = true;
    if (config.stop_accuracy > 0.0 && history.final_metrics.accuracy >= config.stop_accuracy)
      break;
  }
  if (!evaluated) history.final_metrics = evaluate_with(model, test);
  return history;
}

}  // namespace canet
