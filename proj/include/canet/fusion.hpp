#pragma once

#include <span>
#include <string>
#include <vector>

#include "canet/train.hpp"

namespace canet {

struct Vote {
  std::string model_id;
  std::size_t predicted = 0;
  std::vector<double> probs;
};

// Per-window ballot; decision-level fusion demands at least three voters.
using VotePanel = std::vector<Vote>;

// Class with the most votes. Ties fall to the largest summed probability
// over the tied classes; a residual exact tie goes to the lowest class
// index. Invariant under voter order.
std::size_t majority_vote(const VotePanel& panel);

// Vote every window across the models, then score the fused predictions.
Metrics late_fuse_evaluate(std::span<const Classifier* const> models,
                           std::span<const Window> windows);

}  // namespace canet
