#include "canet/fusion.hpp"

#include <stdexcept>

namespace canet {

std::size_t majority_vote(const VotePanel& panel) {
  if (panel.size() < 3)
    throw std::invalid_argument("late fusion demands at least triple predictions, got " +
                                std::to_string(panel.size()));
  std::size_t num_classes = panel.front().probs.size();
  if (num_classes == 0) throw std::invalid_argument("empty probability vector in vote panel");
  for (const Vote& v : panel) {
    if (v.probs.size() != num_classes)
      throw std::invalid_argument("voter '" + v.model_id + "' has " +
                                  std::to_string(v.probs.size()) + " probabilities, expected " +
                                  std::to_string(num_classes));
    if (v.predicted >= num_classes)
      throw std::invalid_argument("voter '" + v.model_id + "' predicts class " +
                                  std::to_string(v.predicted) + " of " +
                                  std::to_string(num_classes));
  }
  std::vector<std::size_t> counts(num_classes, 0);
  for (const Vote& v : panel) counts[v.predicted]++;
  std::size_t best_count = 0;
  for (std::size_t c : counts) best_count = std::max(best_count, c);
  std::vector<std::size_t> tied;
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] == best_count) tied.push_back(c);
  if (tied.size() == 1) return tied.front();
  std::size_t winner = tied.front();
  double best_mass = -1.0;
  for (std::size_t c : tied) {
    double mass = 0.0;
    for (const Vote& v : panel) mass += v.probs[c];
    if (mass > best_mass) {
      best_mass = mass;
      winner = c;  // first (lowest) tied class wins residual exact ties
    }
  }
  return winner;
}

Metrics late_fuse_evaluate(std::span<const Classifier* const> models,
                           std::span<const Window> windows) {
  if (models.size() < 3)
    throw std::invalid_argument("late fusion demands at least triple predictions, got " +
                                std::to_string(models.size()) + " models");
  if (windows.empty()) throw std::invalid_argument("late_fuse_evaluate: empty window list");
  std::size_t num_classes = models.front()->num_classes();
  for (const Classifier* m : models) {
    check_registry(*m, windows.front().registry());
    if (m->num_classes() != num_classes)
      throw std::invalid_argument("models disagree on class count");
  }
  std::vector<std::size_t> labels, preds;
  labels.reserve(windows.size());
  preds.reserve(windows.size());
  for (const Window& w : windows) {
    VotePanel panel;
    panel.reserve(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) {
      Prediction p = models[i]->predict(w);
      std::vector<double> probs(p.probs.data(), p.probs.data() + p.probs.size());
      panel.push_back({"model" + std::to_string(i), p.predicted_class(), std::move(probs)});
    }
    labels.push_back(w.label());
    preds.push_back(majority_vote(panel));
  }
  return compute_metrics(labels, preds, num_classes);
}

}  // namespace canet
