#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "canet/model.hpp"

namespace canet {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  // > 0: stop as soon as test accuracy reaches this value.
  double stop_accuracy = 0.0;
};

// Bias-corrected Adam moments, aligned with the model's parameter visit
// order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static AdamState make(Model& model);
};

// m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2; theta -= lr*mhat/(sqrt(vhat)+eps)
void adam_step(std::span<Tensor*> params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // No instance of this class in labels or predictions; F1 = 0 by convention.
  bool degenerate = false;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

Metrics compute_metrics(std::span<const std::size_t> labels, std::span<const std::size_t> preds,
                        std::size_t num_classes);

Metrics evaluate(const Classifier& model, std::span<const Window> windows);
// As evaluate, but reusing one tape and exposing the per-window predictions.
Metrics evaluate_with(Model& model, std::span<const Window> windows,
                      std::vector<std::size_t>* predictions = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
};

struct History {
  std::string model_kind;
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  Metrics final_metrics;
};

// {config:{...}, epochs:[{epoch, train_loss, test_accuracy, test_macro_f1}],
//  final:{accuracy, macro_f1, per_class, confusion}}
std::string history_to_json(const History& history);
std::string metrics_to_json(const Metrics& metrics);

// Seeded epoch loop: shuffled mini-batches, mean cross-entropy gradient per
// batch, Adam updates, per-epoch test metrics. Gradients accumulate in
// window-index order, so results are bitwise reproducible for a seed.
History fit(const TrainConfig& config, Model& model, std::span<const Window> train,
            std::span<const Window> test);

}  // namespace canet
