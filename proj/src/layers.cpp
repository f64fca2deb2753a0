#include "canet/layers.hpp"

#include <cmath>

namespace canet {

void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
}

LinearParams LinearParams::make(std::size_t in, std::size_t out) {
  LinearParams p;
  p.weights = Tensor(in, out);
  p.bias = Tensor(1, out);
  return p;
}

void LinearParams::init(Rng& rng) {
  init_uniform(weights, weights.rows(), rng);
  init_uniform(bias, weights.rows(), rng);
}

void LinearParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".W", weights);
  fn(prefix + ".b", bias);
}

Var linear(Tape& tape, Var x, const LinearVars& p) {
  return tape.add(tape.matmul(x, p.weights), p.bias);
}

LinearVars stage(Tape& tape, LinearParams& p, bool requires_grad) {
  return {tape.leaf(p.weights, requires_grad), tape.leaf(p.bias, requires_grad)};
}

LstmStackParams LstmStackParams::make(std::size_t input_size, std::size_t hidden,
                                      std::size_t num_layers, bool shared) {
  LstmStackParams p;
  p.input_size = input_size;
  p.hidden = hidden;
  p.shared = shared;
  p.layers.resize(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    std::size_t in = (l == 0) ? input_size : hidden;
    p.layers[l].input_weights = Tensor(in, 4 * hidden);
    p.layers[l].recurrent_weights = Tensor(hidden, 4 * hidden);
    p.layers[l].bias = Tensor(1, 4 * hidden);
  }
  return p;
}

void LstmStackParams::init(Rng& rng) {
  for (auto& l : layers) {
    init_uniform(l.input_weights, l.input_weights.rows(), rng);
    init_uniform(l.recurrent_weights, hidden, rng);
    init_uniform(l.bias, hidden, rng);
  }
}

void LstmStackParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string lp = prefix + ".l" + std::to_string(l);
    fn(lp + ".Wx", layers[l].input_weights);
    fn(lp + ".Wh", layers[l].recurrent_weights);
    fn(lp + ".b", layers[l].bias);
  }
}

std::vector<LstmLayerVars> stage(Tape& tape, LstmStackParams& p, bool requires_grad) {
  std::vector<LstmLayerVars> vars;
  vars.reserve(p.layers.size());
  for (auto& l : p.layers)
    vars.push_back({tape.leaf(l.input_weights, requires_grad),
                    tape.leaf(l.recurrent_weights, requires_grad),
                    tape.leaf(l.bias, requires_grad)});
  return vars;
}

Var lstm_forward(Tape& tape, std::span<const LstmLayerVars> stack, Var x, std::size_t hidden) {
  return tape.lstm_stack(x, stack, hidden);
}

TemporalAttentionResult temporal_attention(Tape& tape, Var hidden_states, Var w) {
  Var logits = tape.matmul(hidden_states, w);            // T x 1
  Var scores = tape.softmax(logits, Axis::cols);         // normalized over time
  Var summary = tape.matmul(tape.transpose(hidden_states), scores);  // K x 1
  return {scores, summary};
}

ComponentAttentionParams ComponentAttentionParams::make(std::size_t components,
                                                        std::size_t bottleneck) {
  ComponentAttentionParams p;
  p.W1 = Tensor(components, bottleneck);
  p.b1 = Tensor(1, bottleneck);
  p.W2 = Tensor(bottleneck, components);
  p.b2 = Tensor(1, components);
  return p;
}

void ComponentAttentionParams::init(Rng& rng) {
  init_uniform(W1, W1.rows(), rng);
  init_uniform(b1, W1.rows(), rng);
  init_uniform(W2, W2.rows(), rng);
  init_uniform(b2, W2.rows(), rng);
}

void ComponentAttentionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".W1", W1);
  fn(prefix + ".b1", b1);
  fn(prefix + ".W2", W2);
  fn(prefix + ".b2", b2);
}

ComponentAttentionVars stage(Tape& tape, ComponentAttentionParams& p, bool requires_grad) {
  return {tape.leaf(p.W1, requires_grad), tape.leaf(p.b1, requires_grad),
          tape.leaf(p.W2, requires_grad), tape.leaf(p.b2, requires_grad)};
}

ComponentAttentionResult component_attention(Tape& tape, Var theta,
                                             const ComponentAttentionVars& p, Axis axis) {
  Var hidden = tape.tanh(tape.add(tape.matmul_stable(theta, p.W1), p.b1));
  Var logits = tape.add(tape.matmul(hidden, p.W2), p.b2);
  Var map = tape.softmax(logits, axis);
  Var weighted = tape.mul(map, theta);
  return {map, weighted};
}

Var classifier_head(Tape& tape, Var weighted, Var W3, Var b3) {
  const Tensor& o = tape.value(weighted);
  Var flat = tape.reshape(tape.transpose(weighted), 1, o.size());
  Var logits = tape.add(tape.matmul_stable(flat, W3), b3);
  return tape.softmax(logits, Axis::rows);
}

Var gcn_layer(Tape& tape, Var x, Var weights, Var a_hat) {
  return tape.relu(tape.matmul(tape.matmul(a_hat, x), weights));
}

GcnStackParams GcnStackParams::make(std::size_t input_size, std::size_t hidden,
                                    std::size_t num_layers) {
  GcnStackParams p;
  p.input_size = input_size;
  p.hidden = hidden;
  p.weights.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l)
    p.weights.emplace_back((l == 0) ? input_size : hidden, hidden);
  return p;
}

void GcnStackParams::init(Rng& rng) {
  for (auto& w : weights) init_uniform(w, w.rows(), rng);
}

void GcnStackParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t l = 0; l < weights.size(); ++l)
    fn(prefix + ".l" + std::to_string(l) + ".W", weights[l]);
}

std::vector<Var> stage(Tape& tape, GcnStackParams& p, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(p.weights.size());
  for (auto& w : p.weights) vars.push_back(tape.leaf(w, requires_grad));
  return vars;
}

Var cross_entropy(Tape& tape, Var probs, std::size_t label) {
  return tape.cross_entropy(probs, label);
}

}  // namespace canet
