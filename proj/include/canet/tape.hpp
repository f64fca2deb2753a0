#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "canet/tensor.hpp"

namespace canet {

// Softmax normalization domain: each row sums to 1, each column sums to 1,
// or the whole matrix sums to 1.
enum class Axis { rows, cols, flat };

struct Var {
  std::uint32_t id = 0xffffffffu;
  bool valid() const { return id != 0xffffffffu; }
};

// One LSTM layer's parameters staged on a tape. Gate columns are packed
// [input | forget | candidate | output], each block `hidden` wide.
struct LstmLayerVars {
  Var input_weights;      // in x 4K
  Var recurrent_weights;  // K x 4K
  Var bias;               // 1 x 4K
};

// Reverse-mode tape over rank-2 tensors. Operations are recorded in
// execution order (so inputs always precede their consumers); backward()
// zeroes every gradient accumulator, then visits each recorded operation
// exactly once in reverse. reset() keeps node storage so one tape can be
// reused across many forward passes without reallocating.
//
// A tape is confined to one logical execution context; distinct tapes may
// run concurrently.
class Tape {
 public:
  Tape();

  Var leaf(const Tensor& value, bool requires_grad = false);
  Var leaf(Tensor&& value, bool requires_grad = false);

  Var matmul(Var a, Var b);
  // As matmul, but each output cell sums its products in value order, which
  // makes the result invariant under any joint permutation of a's columns
  // with b's rows. Used where the component order must not leak into
  // rounding.
  Var matmul_stable(Var a, Var b);
  Var add(Var a, Var b);  // exact shape, or one operand a broadcast 1xN row / Mx1 column
  Var mul(Var a, Var b);  // same broadcast rules
  Var tanh(Var x);
  Var sigmoid(Var x);
  Var relu(Var x);
  // Max-subtraction for stability; denominators sum in value order so equal
  // slices give bitwise-equal results regardless of storage order.
  Var softmax(Var x, Axis axis);
  Var transpose(Var x);
  Var reshape(Var x, std::size_t rows, std::size_t cols);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var slice_row(Var x, std::size_t row);
  Var slice_cols(Var x, std::size_t first, std::size_t count);
  Var sum(Var x);
  Var mean_rows(Var x);  // 1xN column means
  // -log(max(probs[label], 1e-12)); probs is a 1xN row from a softmax.
  Var cross_entropy(Var probs, std::size_t label);
  // Stacked LSTM: sigmoid input/forget/output gates, tanh candidate,
  // zero initial states. Returns all top-layer hidden states, T x K.
  Var lstm_stack(Var x, std::span<const LstmLayerVars> layers, std::size_t hidden);

  void backward(Var loss);

  const Tensor& value(Var v) const { return node(v).value; }
  // Valid after backward(); exact zeros for anything loss does not reach.
  const Tensor& grad(Var v);

  std::size_t node_count() const { return live_; }
  void reset();

 private:
  enum class Op : std::uint8_t {
    leaf, matmul, matmul_stable, add, mul, tanh, sigmoid, relu, softmax,
    transpose, reshape, concat_rows, concat_cols, slice_row, slice_cols,
    sum, mean_rows, cross_entropy, lstm_stack
  };

  struct Node {
    Op op = Op::leaf;
    Axis axis = Axis::rows;
    bool requires_grad = false;
    std::uint32_t a = 0, b = 0;
    std::size_t p0 = 0, p1 = 0;
    std::vector<std::uint32_t> inputs;  // concat parts / lstm [x, Wx, Wh, b, ...]
    Tensor value;
    Tensor grad;
    std::vector<Tensor> aux;  // lstm per-layer caches
  };

  Node& node(Var v) { return nodes_[v.id]; }
  const Node& node(Var v) const { return nodes_[v.id]; }
  Node& fresh(Op op, Var* out);
  Var unary(Op op, Var x);
  Var binary(Op op, Var a, Var b);
  void backprop(Node& n);
  void lstm_forward(Node& n);
  void lstm_backward(Node& n);

  std::vector<Node> nodes_;
  std::size_t live_ = 0;
  std::vector<double> scratch_;
};

}  // namespace canet
