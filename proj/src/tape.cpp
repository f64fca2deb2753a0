#include "canet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace canet {

namespace {

// C[m x n] (+)= A[m x k] * B[k x n]
void mm_nn(double* C, const double* A, const double* B, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(C, C + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      double av = a[l];
      const double* b = B + l * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x n] (+)= A[m x k] * B^T, with B stored [n x k]
void mm_nt(double* C, const double* A, const double* B, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += a[l] * b[l];
      c[j] = accumulate ? c[j] + s : s;
    }
  }
}

// C[k x n] (+)= A^T * B, with A stored [m x k], B stored [m x n]
void mm_tn(double* C, const double* A, const double* B, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(C, C + k * n, 0.0);
  for (std::size_t l = 0; l < m; ++l) {
    const double* a = A + l * k;
    const double* b = B + l * n;
    for (std::size_t i = 0; i < k; ++i) {
      double av = a[i];
      double* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

inline double sigmoid_fn(double x) { return 1.0 / (1.0 + std::exp(-x)); }

enum class Broadcast { none, row, col };

// Which operand (if any) broadcasts against the other's m x n shape.
void broadcast_kind(const Tensor& a, const Tensor& b, Broadcast& ba, Broadcast& bb) {
  ba = bb = Broadcast::none;
  if (a.shape() == b.shape()) return;
  if (b.rows() == 1 && b.cols() == a.cols() && a.rows() > 1) { bb = Broadcast::row; return; }
  if (b.cols() == 1 && b.rows() == a.rows() && a.cols() > 1) { bb = Broadcast::col; return; }
  if (a.rows() == 1 && a.cols() == b.cols() && b.rows() > 1) { ba = Broadcast::row; return; }
  if (a.cols() == 1 && a.rows() == b.rows() && b.cols() > 1) { ba = Broadcast::col; return; }
  throw ShapeError("operands not broadcast-compatible: " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

// Reduce a full m x n gradient onto a broadcast operand's own shape.
void reduce_broadcast(Tensor& dst, const Tensor& g, Broadcast kind) {
  std::size_t m = g.rows(), n = g.cols();
  if (kind == Broadcast::row) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j] += g.at(i, j);
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[i] += g.at(i, j);
  }
}

}  // namespace

Tape::Tape() { nodes_.reserve(256); }

void Tape::reset() { live_ = 0; }

Tape::Node& Tape::fresh(Op op, Var* out) {
  if (live_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[live_];
  out->id = static_cast<std::uint32_t>(live_);
  ++live_;
  n.op = op;
  n.axis = Axis::rows;
  n.requires_grad = false;
  n.a = n.b = 0;
  n.p0 = n.p1 = 0;
  n.inputs.clear();
  return n;
}

Var Tape::leaf(const Tensor& value, bool requires_grad) {
  Var v;
  Node& n = fresh(Op::leaf, &v);
  n.value = value;
  n.requires_grad = requires_grad;
  return v;
}

Var Tape::leaf(Tensor&& value, bool requires_grad) {
  Var v;
  Node& n = fresh(Op::leaf, &v);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return v;
}

Var Tape::matmul(Var a, Var b) { return binary(Op::matmul, a, b); }
Var Tape::matmul_stable(Var a, Var b) { return binary(Op::matmul_stable, a, b); }
Var Tape::add(Var a, Var b) { return binary(Op::add, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::mul, a, b); }
Var Tape::tanh(Var x) { return unary(Op::tanh, x); }
Var Tape::sigmoid(Var x) { return unary(Op::sigmoid, x); }
Var Tape::relu(Var x) { return unary(Op::relu, x); }

Var Tape::binary(Op op, Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  Var v;
  if (op == Op::matmul || op == Op::matmul_stable) {
    if (av.cols() != bv.rows())
      throw ShapeError("matmul inner extents disagree: " + shape_str(av.shape()) + " vs " +
                       shape_str(bv.shape()));
    std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Node& nd = fresh(op, &v);
    nd.a = a.id;
    nd.b = b.id;
    nd.value.resize(m, n);
    const Tensor& A = node(Var{nd.a}).value;
    const Tensor& B = node(Var{nd.b}).value;
    if (op == Op::matmul) {
      mm_nn(nd.value.data(), A.data(), B.data(), m, k, n, false);
    } else {
      std::vector<double> terms(k);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t l = 0; l < k; ++l) terms[l] = A.at(i, l) * B.at(l, j);
          nd.value.at(i, j) = sorted_sum(terms);
        }
    }
    nd.requires_grad = node(Var{nd.a}).requires_grad || node(Var{nd.b}).requires_grad;
    return v;
  }
  Broadcast ba, bb;
  broadcast_kind(av, bv, ba, bb);
  const Tensor& big = (ba == Broadcast::none) ? av : bv;
  Node& nd = fresh(op, &v);
  nd.a = a.id;
  nd.b = b.id;
  std::size_t m = big.rows(), n = big.cols();
  nd.value.resize(m, n);
  const Tensor& A = node(Var{nd.a}).value;
  const Tensor& B = node(Var{nd.b}).value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double x = (ba == Broadcast::none) ? A.at(i, j) : (ba == Broadcast::row ? A[j] : A[i]);
      double y = (bb == Broadcast::none) ? B.at(i, j) : (bb == Broadcast::row ? B[j] : B[i]);
      nd.value.at(i, j) = (op == Op::add) ? x + y : x * y;
    }
  nd.requires_grad = node(Var{nd.a}).requires_grad || node(Var{nd.b}).requires_grad;
  return v;
}

Var Tape::unary(Op op, Var x) {
  Var v;
  Node& nd = fresh(op, &v);
  nd.a = x.id;
  const Tensor& X = node(Var{nd.a}).value;
  nd.value.resize(X.rows(), X.cols());
  const double* in = X.data();
  double* out = nd.value.data();
  std::size_t sz = X.size();
  switch (op) {
    case Op::tanh:
      for (std::size_t i = 0; i < sz; ++i) out[i] = std::tanh(in[i]);
      break;
    case Op::sigmoid:
      for (std::size_t i = 0; i < sz; ++i) out[i] = sigmoid_fn(in[i]);
      break;
    case Op::relu:
      for (std::size_t i = 0; i < sz; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    default:
      throw std::logic_error("bad unary op");
  }
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::softmax(Var x, Axis axis) {
  Var v;
  Node& nd = fresh(Op::softmax, &v);
  nd.a = x.id;
  nd.axis = axis;
  const Tensor& X = node(Var{nd.a}).value;
  std::size_t m = X.rows(), n = X.cols();
  nd.value.resize(m, n);
  auto slice = [&](std::size_t count, std::size_t stride, const double* in, double* out) {
    double mx = in[0];
    for (std::size_t i = 1; i < count; ++i) mx = std::max(mx, in[i * stride]);
    std::vector<double> e(count);
    for (std::size_t i = 0; i < count; ++i) e[i] = std::exp(in[i * stride] - mx);
    std::vector<double> terms = e;
    double denom = sorted_sum(terms);
    for (std::size_t i = 0; i < count; ++i) out[i * stride] = e[i] / denom;
  };
  if (axis == Axis::rows) {
    for (std::size_t i = 0; i < m; ++i) slice(n, 1, X.data() + i * n, nd.value.data() + i * n);
  } else if (axis == Axis::cols) {
    for (std::size_t j = 0; j < n; ++j) slice(m, n, X.data() + j, nd.value.data() + j);
  } else {
    slice(m * n, 1, X.data(), nd.value.data());
  }
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::transpose(Var x) {
  Var v;
  Node& nd = fresh(Op::transpose, &v);
  nd.a = x.id;
  const Tensor& X = node(Var{nd.a}).value;
  std::size_t m = X.rows(), n = X.cols();
  nd.value.resize(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) nd.value.at(j, i) = X.at(i, j);
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::reshape(Var x, std::size_t rows, std::size_t cols) {
  const Tensor& X = node(x).value;
  if (rows * cols != X.size())
    throw ShapeError("reshape to " + shape_str({rows, cols}) + " changes size of " +
                     shape_str(X.shape()));
  Var v;
  Node& nd = fresh(Op::reshape, &v);
  nd.a = x.id;
  nd.value.resize(rows, cols);
  const Tensor& in = node(Var{nd.a}).value;
  std::copy(in.data(), in.data() + in.size(), nd.value.data());
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  std::size_t n = node(parts[0]).value.cols();
  std::size_t total = 0;
  for (Var p : parts) {
    if (node(p).value.cols() != n)
      throw ShapeError("concat_rows column mismatch: " + shape_str(node(p).value.shape()));
    total += node(p).value.rows();
  }
  Var v;
  Node& nd = fresh(Op::concat_rows, &v);
  nd.inputs.reserve(parts.size());
  for (Var p : parts) nd.inputs.push_back(p.id);
  nd.value.resize(total, n);
  std::size_t r = 0;
  for (Var p : parts) {
    const Tensor& X = node(p).value;
    std::copy(X.data(), X.data() + X.size(), nd.value.data() + r * n);
    r += X.rows();
    nd.requires_grad = nd.requires_grad || node(p).requires_grad;
  }
  return v;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  std::size_t m = node(parts[0]).value.rows();
  std::size_t total = 0;
  for (Var p : parts) {
    if (node(p).value.rows() != m)
      throw ShapeError("concat_cols row mismatch: " + shape_str(node(p).value.shape()));
    total += node(p).value.cols();
  }
  Var v;
  Node& nd = fresh(Op::concat_cols, &v);
  nd.inputs.reserve(parts.size());
  for (Var p : parts) nd.inputs.push_back(p.id);
  nd.value.resize(m, total);
  std::size_t c = 0;
  for (Var p : parts) {
    const Tensor& X = node(p).value;
    for (std::size_t i = 0; i < m; ++i)
      std::copy(X.data() + i * X.cols(), X.data() + (i + 1) * X.cols(),
                nd.value.data() + i * total + c);
    c += X.cols();
    nd.requires_grad = nd.requires_grad || node(p).requires_grad;
  }
  return v;
}

Var Tape::slice_row(Var x, std::size_t row) {
  const Tensor& X = node(x).value;
  if (row >= X.rows()) throw ShapeError("slice_row " + std::to_string(row) + " out of range");
  Var v;
  Node& nd = fresh(Op::slice_row, &v);
  nd.a = x.id;
  nd.p0 = row;
  std::size_t n = X.cols();
  nd.value.resize(1, n);
  const Tensor& in = node(Var{nd.a}).value;
  std::copy(in.data() + row * n, in.data() + (row + 1) * n, nd.value.data());
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::slice_cols(Var x, std::size_t first, std::size_t count) {
  const Tensor& X = node(x).value;
  if (first + count > X.cols()) throw ShapeError("slice_cols out of range");
  Var v;
  Node& nd = fresh(Op::slice_cols, &v);
  nd.a = x.id;
  nd.p0 = first;
  nd.p1 = count;
  std::size_t m = X.rows();
  nd.value.resize(m, count);
  const Tensor& in = node(Var{nd.a}).value;
  for (std::size_t i = 0; i < m; ++i)
    std::copy(in.data() + i * in.cols() + first, in.data() + i * in.cols() + first + count,
              nd.value.data() + i * count);
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::sum(Var x) {
  Var v;
  Node& nd = fresh(Op::sum, &v);
  nd.a = x.id;
  nd.value.resize(1, 1);
  const Tensor& X = node(Var{nd.a}).value;
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
  nd.value[0] = s;
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::mean_rows(Var x) {
  Var v;
  Node& nd = fresh(Op::mean_rows, &v);
  nd.a = x.id;
  const Tensor& X = node(Var{nd.a}).value;
  std::size_t m = X.rows(), n = X.cols();
  nd.value.resize(1, n);
  nd.value.fill(0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) nd.value[j] += X.at(i, j);
  for (std::size_t j = 0; j < n; ++j) nd.value[j] /= static_cast<double>(m);
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::cross_entropy(Var probs, std::size_t label) {
  const Tensor& P = node(probs).value;
  if (P.rows() != 1) throw ShapeError("cross_entropy expects a 1xN row, got " + shape_str(P.shape()));
  if (label >= P.cols())
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                            std::to_string(P.cols()) + " classes");
  Var v;
  Node& nd = fresh(Op::cross_entropy, &v);
  nd.a = probs.id;
  nd.p0 = label;
  nd.value.resize(1, 1);
  double q = std::max(node(Var{nd.a}).value[label], 1e-12);
  nd.value[0] = -std::log(q);
  nd.requires_grad = node(Var{nd.a}).requires_grad;
  return v;
}

Var Tape::lstm_stack(Var x, std::span<const LstmLayerVars> layers, std::size_t hidden) {
  if (layers.empty()) throw ShapeError("lstm_stack needs at least one layer");
  const Tensor& X = node(x).value;
  std::size_t T = X.rows();
  std::size_t K = hidden;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::size_t in = (l == 0) ? X.cols() : K;
    const Tensor& Wx = node(layers[l].input_weights).value;
    const Tensor& Wh = node(layers[l].recurrent_weights).value;
    const Tensor& b = node(layers[l].bias).value;
    if (Wx.rows() != in || Wx.cols() != 4 * K)
      throw ShapeError("lstm layer " + std::to_string(l) + " input weights " +
                       shape_str(Wx.shape()) + ", expected " + shape_str({in, 4 * K}));
    if (Wh.rows() != K || Wh.cols() != 4 * K)
      throw ShapeError("lstm layer " + std::to_string(l) + " recurrent weights " +
                       shape_str(Wh.shape()) + ", expected " + shape_str({K, 4 * K}));
    if (b.rows() != 1 || b.cols() != 4 * K)
      throw ShapeError("lstm layer " + std::to_string(l) + " bias " + shape_str(b.shape()) +
                       ", expected " + shape_str({std::size_t(1), 4 * K}));
  }
  Var v;
  Node& nd = fresh(Op::lstm_stack, &v);
  nd.p0 = K;
  nd.p1 = layers.size();
  nd.inputs.reserve(1 + 3 * layers.size());
  nd.inputs.push_back(x.id);
  nd.requires_grad = node(x).requires_grad;
  for (const auto& l : layers) {
    nd.inputs.push_back(l.input_weights.id);
    nd.inputs.push_back(l.recurrent_weights.id);
    nd.inputs.push_back(l.bias.id);
    nd.requires_grad = nd.requires_grad || node(l.input_weights).requires_grad ||
                       node(l.recurrent_weights).requires_grad || node(l.bias).requires_grad;
  }
  nd.value.resize(T, K);
  lstm_forward(nd);
  return v;
}

void Tape::lstm_forward(Node& n) {
  std::size_t K = n.p0, L = n.p1;
  const Tensor& X = nodes_[n.inputs[0]].value;
  std::size_t T = X.rows();
  n.aux.resize(4 * L);
  for (std::size_t l = 0; l < L; ++l) {
    n.aux[4 * l + 0].resize(T, 4 * K);  // activated gates [i f g o]
    n.aux[4 * l + 1].resize(T, K);      // cell state
    n.aux[4 * l + 2].resize(T, K);      // tanh(cell)
    n.aux[4 * l + 3].resize(T, K);      // hidden
  }
  scratch_.resize(2 * K);
  double* hprev = scratch_.data();
  double* cprev = scratch_.data() + K;
  for (std::size_t l = 0; l < L; ++l) {
    std::size_t in = (l == 0) ? X.cols() : K;
    const double* Xl = (l == 0) ? X.data() : n.aux[4 * (l - 1) + 3].data();
    const double* Wx = nodes_[n.inputs[1 + 3 * l + 0]].value.data();
    const double* Wh = nodes_[n.inputs[1 + 3 * l + 1]].value.data();
    const double* b = nodes_[n.inputs[1 + 3 * l + 2]].value.data();
    Tensor& act = n.aux[4 * l + 0];
    Tensor& cell = n.aux[4 * l + 1];
    Tensor& tanhc = n.aux[4 * l + 2];
    Tensor& hid = n.aux[4 * l + 3];
    std::fill(hprev, hprev + K, 0.0);
    std::fill(cprev, cprev + K, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      double* z = act.data() + t * 4 * K;
      std::copy(b, b + 4 * K, z);
      const double* xt = Xl + t * in;
      for (std::size_t e = 0; e < in; ++e) {
        double xv = xt[e];
        const double* w = Wx + e * 4 * K;
        for (std::size_t j = 0; j < 4 * K; ++j) z[j] += xv * w[j];
      }
      for (std::size_t h = 0; h < K; ++h) {
        double hv = hprev[h];
        const double* w = Wh + h * 4 * K;
        for (std::size_t j = 0; j < 4 * K; ++j) z[j] += hv * w[j];
      }
      for (std::size_t j = 0; j < K; ++j) z[j] = sigmoid_fn(z[j]);              // input gate
      for (std::size_t j = K; j < 2 * K; ++j) z[j] = sigmoid_fn(z[j]);          // forget gate
      for (std::size_t j = 2 * K; j < 3 * K; ++j) z[j] = std::tanh(z[j]);       // candidate
      for (std::size_t j = 3 * K; j < 4 * K; ++j) z[j] = sigmoid_fn(z[j]);      // output gate
      double* ct = cell.data() + t * K;
      double* tct = tanhc.data() + t * K;
      double* ht = hid.data() + t * K;
      for (std::size_t j = 0; j < K; ++j) {
        double c = z[K + j] * cprev[j] + z[j] * z[2 * K + j];
        ct[j] = c;
        double tc = std::tanh(c);
        tct[j] = tc;
        ht[j] = z[3 * K + j] * tc;
      }
      hprev = ht;
      cprev = ct;
    }
    hprev = scratch_.data();
    cprev = scratch_.data() + K;
  }
  const Tensor& top = n.aux[4 * (L - 1) + 3];
  std::copy(top.data(), top.data() + top.size(), n.value.data());
}

void Tape::lstm_backward(Node& n) {
  std::size_t K = n.p0, L = n.p1;
  const Tensor& X = nodes_[n.inputs[0]].value;
  std::size_t T = X.rows();
  std::vector<double> gh_cur(n.grad.data(), n.grad.data() + T * K);
  std::vector<double> gh_below;
  std::vector<double> dz(4 * K), dh(K), dc(K), dh_next(K), dc_next(K);
  for (std::size_t li = L; li-- > 0;) {
    std::size_t in = (li == 0) ? X.cols() : K;
    const double* Xl = (li == 0) ? X.data() : n.aux[4 * (li - 1) + 3].data();
    Node& wx_node = nodes_[n.inputs[1 + 3 * li + 0]];
    Node& wh_node = nodes_[n.inputs[1 + 3 * li + 1]];
    Node& b_node = nodes_[n.inputs[1 + 3 * li + 2]];
    const double* Wx = wx_node.value.data();
    const double* Wh = wh_node.value.data();
    const Tensor& act = n.aux[4 * li + 0];
    const Tensor& cell = n.aux[4 * li + 1];
    const Tensor& tanhc = n.aux[4 * li + 2];
    gh_below.assign(T * in, 0.0);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    std::fill(dc_next.begin(), dc_next.end(), 0.0);
    for (std::size_t t = T; t-- > 0;) {
      const double* z = act.data() + t * 4 * K;
      const double* tct = tanhc.data() + t * K;
      for (std::size_t j = 0; j < K; ++j) {
        double i_g = z[j], f_g = z[K + j], g_g = z[2 * K + j], o_g = z[3 * K + j];
        double dhj = gh_cur[t * K + j] + dh_next[j];
        double dcj = dhj * o_g * (1.0 - tct[j] * tct[j]) + dc_next[j];
        double c_prev = (t > 0) ? cell.at(t - 1, j) : 0.0;
        dz[j] = dcj * g_g * i_g * (1.0 - i_g);
        dz[K + j] = dcj * c_prev * f_g * (1.0 - f_g);
        dz[2 * K + j] = dcj * i_g * (1.0 - g_g * g_g);
        dz[3 * K + j] = dhj * tct[j] * o_g * (1.0 - o_g);
        dc_next[j] = dcj * f_g;
      }
      if (b_node.requires_grad) {
        double* gb = b_node.grad.data();
        for (std::size_t j = 0; j < 4 * K; ++j) gb[j] += dz[j];
      }
      const double* xt = Xl + t * in;
      if (wx_node.requires_grad) {
        double* gWx = wx_node.grad.data();
        for (std::size_t e = 0; e < in; ++e) {
          double xv = xt[e];
          double* g = gWx + e * 4 * K;
          for (std::size_t j = 0; j < 4 * K; ++j) g[j] += xv * dz[j];
        }
      }
      if (t > 0 && wh_node.requires_grad) {
        const double* hprev = n.aux[4 * li + 3].data() + (t - 1) * K;
        double* gWh = wh_node.grad.data();
        for (std::size_t h = 0; h < K; ++h) {
          double hv = hprev[h];
          double* g = gWh + h * 4 * K;
          for (std::size_t j = 0; j < 4 * K; ++j) g[j] += hv * dz[j];
        }
      }
      double* gx = gh_below.data() + t * in;
      for (std::size_t e = 0; e < in; ++e) {
        const double* w = Wx + e * 4 * K;
        double s = 0.0;
        for (std::size_t j = 0; j < 4 * K; ++j) s += w[j] * dz[j];
        gx[e] += s;
      }
      if (t > 0) {
        for (std::size_t h = 0; h < K; ++h) {
          const double* w = Wh + h * 4 * K;
          double s = 0.0;
          for (std::size_t j = 0; j < 4 * K; ++j) s += w[j] * dz[j];
          dh_next[h] = s;
        }
      }
    }
    if (li > 0) {
      gh_cur = std::move(gh_below);
    } else {
      Node& x_node = nodes_[n.inputs[0]];
      if (x_node.requires_grad) {
        double* gx = x_node.grad.data();
        for (std::size_t i = 0; i < T * in; ++i) gx[i] += gh_below[i];
      }
    }
  }
}

const Tensor& Tape::grad(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) {
    n.grad.resize(n.value.rows(), n.value.cols());
    n.grad.fill(0.0);
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  Node& ln = node(loss);
  if (!ln.value.is_scalar())
    throw ShapeError("backward needs a scalar loss, got " + shape_str(ln.value.shape()));
  for (std::size_t i = 0; i < live_; ++i) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    n.grad.resize(n.value.rows(), n.value.cols());
    n.grad.fill(0.0);
  }
  if (!ln.requires_grad) return;  // loss reaches no trainable leaf; all grads stay zero
  ln.grad[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::leaf) continue;
    backprop(n);
  }
}

void Tape::backprop(Node& n) {
  auto in_grad = [&](std::uint32_t id) -> Tensor* {
    Node& m = nodes_[id];
    return m.requires_grad ? &m.grad : nullptr;
  };
  const Tensor& g = n.grad;
  switch (n.op) {
    case Op::matmul:
    case Op::matmul_stable: {
      const Tensor& A = nodes_[n.a].value;
      const Tensor& B = nodes_[n.b].value;
      std::size_t m = A.rows(), k = A.cols(), c = B.cols();
      if (Tensor* ga = in_grad(n.a)) mm_nt(ga->data(), g.data(), B.data(), m, c, k, true);
      if (Tensor* gb = in_grad(n.b)) mm_tn(gb->data(), A.data(), g.data(), m, k, c, true);
      break;
    }
    case Op::add: {
      const Tensor& A = nodes_[n.a].value;
      const Tensor& B = nodes_[n.b].value;
      Broadcast ba, bb;
      broadcast_kind(A, B, ba, bb);
      if (Tensor* ga = in_grad(n.a)) {
        if (ba == Broadcast::none)
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        else
          reduce_broadcast(*ga, g, ba);
      }
      if (Tensor* gb = in_grad(n.b)) {
        if (bb == Broadcast::none)
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
        else
          reduce_broadcast(*gb, g, bb);
      }
      break;
    }
    case Op::mul: {
      const Tensor& A = nodes_[n.a].value;
      const Tensor& B = nodes_[n.b].value;
      Broadcast ba, bb;
      broadcast_kind(A, B, ba, bb);
      std::size_t m = n.value.rows(), c = n.value.cols();
      auto fetch = [&](const Tensor& t, Broadcast k, std::size_t i, std::size_t j) {
        return k == Broadcast::none ? t.at(i, j) : (k == Broadcast::row ? t[j] : t[i]);
      };
      Tensor* ga = in_grad(n.a);
      Tensor* gb = in_grad(n.b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          double gv = g.at(i, j);
          if (ga) {
            double contrib = gv * fetch(B, bb, i, j);
            if (ba == Broadcast::none) ga->at(i, j) += contrib;
            else if (ba == Broadcast::row) (*ga)[j] += contrib;
            else (*ga)[i] += contrib;
          }
          if (gb) {
            double contrib = gv * fetch(A, ba, i, j);
            if (bb == Broadcast::none) gb->at(i, j) += contrib;
            else if (bb == Broadcast::row) (*gb)[j] += contrib;
            else (*gb)[i] += contrib;
          }
        }
      break;
    }
    case Op::tanh: {
      if (Tensor* ga = in_grad(n.a)) {
        const Tensor& y = n.value;
        for (std::size_t i = 0; i < y.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
      }
      break;
    }
    case Op::sigmoid: {
      if (Tensor* ga = in_grad(n.a)) {
        const Tensor& y = n.value;
        for (std::size_t i = 0; i < y.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
      }
      break;
    }
    case Op::relu: {
      if (Tensor* ga = in_grad(n.a)) {
        const Tensor& x = nodes_[n.a].value;
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) (*ga)[i] += g[i];
      }
      break;
    }
    case Op::softmax: {
      Tensor* ga = in_grad(n.a);
      if (!ga) break;
      const Tensor& y = n.value;
      std::size_t m = y.rows(), c = y.cols();
      auto slice = [&](std::size_t count, std::size_t stride, const double* yv,
                       const double* gv, double* out) {
        double dot = 0.0;
        for (std::size_t i = 0; i < count; ++i) dot += gv[i * stride] * yv[i * stride];
        for (std::size_t i = 0; i < count; ++i)
          out[i * stride] += yv[i * stride] * (gv[i * stride] - dot);
      };
      if (n.axis == Axis::rows) {
        for (std::size_t i = 0; i < m; ++i)
          slice(c, 1, y.data() + i * c, g.data() + i * c, ga->data() + i * c);
      } else if (n.axis == Axis::cols) {
        for (std::size_t j = 0; j < c; ++j) slice(m, c, y.data() + j, g.data() + j, ga->data() + j);
      } else {
        slice(m * c, 1, y.data(), g.data(), ga->data());
      }
      break;
    }
    case Op::transpose: {
      if (Tensor* ga = in_grad(n.a)) {
        std::size_t m = n.value.rows(), c = n.value.cols();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) ga->at(j, i) += g.at(i, j);
      }
      break;
    }
    case Op::reshape: {
      if (Tensor* ga = in_grad(n.a))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      break;
    }
    case Op::concat_rows: {
      std::size_t r = 0, c = n.value.cols();
      for (std::uint32_t id : n.inputs) {
        Node& part = nodes_[id];
        std::size_t pr = part.value.rows();
        if (part.requires_grad)
          for (std::size_t i = 0; i < pr * c; ++i) part.grad[i] += g[r * c + i];
        r += pr;
      }
      break;
    }
    case Op::concat_cols: {
      std::size_t coff = 0, m = n.value.rows(), total = n.value.cols();
      for (std::uint32_t id : n.inputs) {
        Node& part = nodes_[id];
        std::size_t pc = part.value.cols();
        if (part.requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j)
              part.grad.at(i, j) += g[i * total + coff + j];
        coff += pc;
      }
      break;
    }
    case Op::slice_row: {
      if (Tensor* ga = in_grad(n.a)) {
        std::size_t c = n.value.cols();
        for (std::size_t j = 0; j < c; ++j) ga->at(n.p0, j) += g[j];
      }
      break;
    }
    case Op::slice_cols: {
      if (Tensor* ga = in_grad(n.a)) {
        std::size_t m = n.value.rows(), c = n.value.cols();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) ga->at(i, n.p0 + j) += g.at(i, j);
      }
      break;
    }
    case Op::sum: {
      if (Tensor* ga = in_grad(n.a)) {
        double gv = g[0];
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += gv;
      }
      break;
    }
    case Op::mean_rows: {
      if (Tensor* ga = in_grad(n.a)) {
        std::size_t m = ga->rows(), c = ga->cols();
        double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += g[j] * inv;
      }
      break;
    }
    case Op::cross_entropy: {
      if (Tensor* ga = in_grad(n.a)) {
        double p = nodes_[n.a].value[n.p0];
        if (p > 1e-12) (*ga)[n.p0] += -g[0] / p;
      }
      break;
    }
    case Op::lstm_stack:
      lstm_backward(n);
      break;
    case Op::leaf:
      break;
  }
}

}  // namespace canet
