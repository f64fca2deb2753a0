#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "canet/rng.hpp"
#include "canet/tape.hpp"

namespace canet {

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

// All trainable tensors start uniform(-s, s) with s = 1/sqrt(fan_in), where
// fan_in is the consuming layer's input width.
void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

struct LinearParams {
  Tensor weights;  // in x out
  Tensor bias;     // 1 x out

  static LinearParams make(std::size_t in, std::size_t out);
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LinearVars {
  Var weights, bias;
};

// x*W + b, bias broadcast over rows.
Var linear(Tape& tape, Var x, const LinearVars& p);
LinearVars stage(Tape& tape, LinearParams& p, bool requires_grad = true);

struct LstmStackParams {
  std::size_t input_size = 0;
  std::size_t hidden = 0;
  bool shared = false;  // one set of weights reused across all branches
  struct Layer {
    Tensor input_weights;      // in x 4K, gate blocks [i f g o]
    Tensor recurrent_weights;  // K x 4K
    Tensor bias;               // 1 x 4K
  };
  std::vector<Layer> layers;

  static LstmStackParams make(std::size_t input_size, std::size_t hidden,
                              std::size_t num_layers, bool shared);
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

std::vector<LstmLayerVars> stage(Tape& tape, LstmStackParams& p, bool requires_grad = true);

// All top-layer hidden states for a T x E input sequence, T x K.
Var lstm_forward(Tape& tape, std::span<const LstmLayerVars> stack, Var x, std::size_t hidden);

struct TemporalAttentionResult {
  Var scores;   // T x 1, sums to 1
  Var summary;  // K x 1, attention-weighted mix of the hidden states
};

// scores = softmax(H*w) over time; summary = H^T * scores.
TemporalAttentionResult temporal_attention(Tape& tape, Var hidden_states, Var w);

struct ComponentAttentionParams {
  Tensor W1;  // C x D
  Tensor b1;  // 1 x D
  Tensor W2;  // D x C
  Tensor b2;  // 1 x C

  static ComponentAttentionParams make(std::size_t components, std::size_t bottleneck);
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ComponentAttentionVars {
  Var W1, b1, W2, b2;
};

ComponentAttentionVars stage(Tape& tape, ComponentAttentionParams& p, bool requires_grad = true);

struct ComponentAttentionResult {
  Var map;       // B, K x C
  Var weighted;  // O = B .* Theta, K x C
};

// B = softmax(tanh(Theta*W1 + b1)*W2 + b2), normalized along `axis`
// (default: each of the K rows sums to 1). The Theta*W1 product uses the
// order-stable reduction so B is exactly equivariant under component
// permutation.
ComponentAttentionResult component_attention(Tape& tape, Var theta,
                                             const ComponentAttentionVars& p,
                                             Axis axis = Axis::rows);

// p = softmax(vec(O)*W3 + b3) with vec() flattening column-major
// (component-major), so each component's summary stays one contiguous block.
Var classifier_head(Tape& tape, Var weighted, Var W3, Var b3);

// relu(A_hat * X * W); A_hat is a prebuilt normalized adjacency.
Var gcn_layer(Tape& tape, Var x, Var weights, Var a_hat);

struct GcnStackParams {
  std::size_t input_size = 0;
  std::size_t hidden = 0;
  std::vector<Tensor> weights;  // layer l: in_l x hidden

  static GcnStackParams make(std::size_t input_size, std::size_t hidden, std::size_t num_layers);
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

std::vector<Var> stage(Tape& tape, GcnStackParams& p, bool requires_grad = true);

// -log(probs[label]), probs clamped below at 1e-12.
Var cross_entropy(Tape& tape, Var probs, std::size_t label);

}  // namespace canet
