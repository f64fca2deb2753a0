#include "canet/model.hpp"

#include <algorithm>
#include <cmath>

namespace canet {

std::size_t Prediction::predicted_class() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

namespace {

void check_window(const Registry& model_reg, const Window& window, std::size_t T) {
  if (!(window.registry() == model_reg))
    throw std::invalid_argument(
        "window registry (" + std::to_string(window.registry().count()) +
        " components, width " + std::to_string(window.registry().total_width()) +
        ") does not match the model registry (" + std::to_string(model_reg.count()) +
        " components, width " + std::to_string(model_reg.total_width()) + ")");
  if (window.length != T)
    throw std::invalid_argument("window has " + std::to_string(window.length) +
                                " frames, model expects " + std::to_string(T));
}

struct StagedCanet {
  std::vector<LinearVars> embeddings;
  std::vector<LstmLayerVars> lstm;
  std::vector<Var> attention_w;
  ComponentAttentionVars component_attention;
  Var head_weights, head_bias;
};

// Staging order must match CANetParams::visit exactly; fit() and gradcheck
// pair tape gradients with visited tensors by position.
StagedCanet stage_canet(Tape& tape, const CANetParams& p, std::vector<Var>* flat) {
  auto track = [&](Var v) {
    if (flat) flat->push_back(v);
    return v;
  };
  StagedCanet s;
  for (const auto& e : p.embeddings)
    s.embeddings.push_back({track(tape.leaf(e.weights, true)), track(tape.leaf(e.bias, true))});
  for (const auto& l : p.lstm.layers)
    s.lstm.push_back({track(tape.leaf(l.input_weights, true)),
                      track(tape.leaf(l.recurrent_weights, true)),
                      track(tape.leaf(l.bias, true))});
  for (const auto& w : p.attention_w) s.attention_w.push_back(track(tape.leaf(w, true)));
  s.component_attention = {track(tape.leaf(p.component_attention.W1, true)),
                           track(tape.leaf(p.component_attention.b1, true)),
                           track(tape.leaf(p.component_attention.W2, true)),
                           track(tape.leaf(p.component_attention.b2, true))};
  s.head_weights = track(tape.leaf(p.head_weights, true));
  s.head_bias = track(tape.leaf(p.head_bias, true));
  return s;
}

struct StagedGcn {
  std::vector<Var> gcn;
  std::vector<LstmLayerVars> gc_lstm;
  Var gc_attention_w;
  StagedCanet trunk;
};

StagedGcn stage_gcn_canet(Tape& tape, const GCNCANetParams& p, std::vector<Var>* flat) {
  auto track = [&](Var v) {
    if (flat) flat->push_back(v);
    return v;
  };
  StagedGcn s;
  for (const auto& w : p.gcn.weights) s.gcn.push_back(track(tape.leaf(w, true)));
  for (const auto& l : p.gc_lstm.layers)
    s.gc_lstm.push_back({track(tape.leaf(l.input_weights, true)),
                         track(tape.leaf(l.recurrent_weights, true)),
                         track(tape.leaf(l.bias, true))});
  s.gc_attention_w = track(tape.leaf(p.gc_attention_w, true));
  for (const auto& e : p.embeddings)
    s.trunk.embeddings.push_back(
        {track(tape.leaf(e.weights, true)), track(tape.leaf(e.bias, true))});
  for (const auto& l : p.lstm.layers)
    s.trunk.lstm.push_back({track(tape.leaf(l.input_weights, true)),
                            track(tape.leaf(l.recurrent_weights, true)),
                            track(tape.leaf(l.bias, true))});
  for (const auto& w : p.attention_w) s.trunk.attention_w.push_back(track(tape.leaf(w, true)));
  s.trunk.component_attention = {track(tape.leaf(p.component_attention.W1, true)),
                                 track(tape.leaf(p.component_attention.b1, true)),
                                 track(tape.leaf(p.component_attention.W2, true)),
                                 track(tape.leaf(p.component_attention.b2, true))};
  s.trunk.head_weights = track(tape.leaf(p.head_weights, true));
  s.trunk.head_bias = track(tape.leaf(p.head_bias, true));
  return s;
}

Prediction extract_prediction(Tape& tape, const ForwardVars& f,
                              std::vector<std::string> names, std::size_t T) {
  Prediction pred;
  pred.probs = tape.value(f.probs);
  if (!pred.probs.all_finite())
    throw std::runtime_error("forward pass produced non-finite probabilities");
  pred.attention.component_names = std::move(names);
  std::size_t C = pred.attention.component_names.size();
  pred.attention.temporal = Tensor(T, C);
  for (std::size_t c = 0; c < C; ++c) {
    const Tensor& a = tape.value(f.temporal_scores[c]);
    for (std::size_t t = 0; t < T; ++t) pred.attention.temporal.at(t, c) = a[t];
  }
  pred.attention.component = tape.value(f.component_map);
  return pred;
}

}  // namespace

CANetParams CANetParams::make(const Registry& reg, ModelDims dims) {
  CANetParams p;
  dims.C = reg.count();
  if (dims.D == 0) dims.D = dims.C;
  p.dims = dims;
  p.registry = reg;
  for (const auto& spec : reg.specs())
    p.embeddings.push_back(LinearParams::make(spec.width, dims.E));
  p.lstm = LstmStackParams::make(dims.E, dims.K, dims.lstm_layers, true);
  for (std::size_t c = 0; c < dims.C; ++c) p.attention_w.emplace_back(dims.K, 1);
  p.component_attention = ComponentAttentionParams::make(dims.C, dims.D);
  p.head_weights = Tensor(dims.K * dims.C, dims.N);
  p.head_bias = Tensor(1, dims.N);
  return p;
}

void CANetParams::init(std::uint64_t seed) {
  Rng rng = Rng(seed).derive(kInitStream);
  for (auto& e : embeddings) e.init(rng);
  lstm.init(rng);
  for (auto& w : attention_w) init_uniform(w, dims.K, rng);
  component_attention.init(rng);
  init_uniform(head_weights, head_weights.rows(), rng);
  init_uniform(head_bias, head_weights.rows(), rng);
}

void CANetParams::visit(const ParamVisitor& fn) {
  for (std::size_t c = 0; c < embeddings.size(); ++c)
    embeddings[c].visit("embed." + registry[c].name, fn);
  lstm.visit("lstm", fn);
  for (std::size_t c = 0; c < attention_w.size(); ++c)
    fn("attn." + registry[c].name + ".w", attention_w[c]);
  component_attention.visit("cattn", fn);
  fn("head.W3", head_weights);
  fn("head.b3", head_bias);
}

ForwardVars canet_build(Tape& tape, const CANetParams& p, const Window& window,
                        std::vector<Var>* param_vars) {
  check_window(p.registry, window, p.dims.T);
  StagedCanet s = stage_canet(tape, p, param_vars);
  ForwardVars out;
  std::vector<Var> summaries;
  for (std::size_t c = 0; c < p.registry.count(); ++c) {
    Var x = tape.leaf(window.component(c));
    Var embedded = linear(tape, x, s.embeddings[c]);
    Var hidden = tape.lstm_stack(embedded, s.lstm, p.dims.K);
    auto att = temporal_attention(tape, hidden, s.attention_w[c]);
    out.temporal_scores.push_back(att.scores);
    summaries.push_back(att.summary);
  }
  Var theta = tape.concat_cols(summaries);
  auto catt = component_attention(tape, theta, s.component_attention, p.component_softmax_axis);
  out.component_map = catt.map;
  out.probs = classifier_head(tape, catt.weighted, s.head_weights, s.head_bias);
  return out;
}

Prediction canet_forward(const CANetParams& params, const Window& window) {
  Tape tape;
  ForwardVars f = canet_build(tape, params, window);
  return extract_prediction(tape, f, params.component_names(), params.dims.T);
}

GCNCANetParams GCNCANetParams::make(const Registry& reg, ModelDims dims, std::size_t gcn_hidden,
                                    std::size_t gcn_layers) {
  GCNCANetParams p;
  p.registry = reg;
  std::vector<std::size_t> other = p.non_joint_components();
  if (reg.indices_of(Modality::joints).size() != 13)
    throw std::invalid_argument("gcn-canet needs a registry with 13 joint components, got " +
                                std::to_string(reg.indices_of(Modality::joints).size()));
  dims.C = other.size() + 1;  // GC plus the non-joint components
  if (dims.D == 0) dims.D = dims.C;
  p.dims = dims;
  p.gcn = GcnStackParams::make(3, gcn_hidden, gcn_layers);
  p.gc_lstm = LstmStackParams::make(gcn_hidden, dims.K, dims.lstm_layers, false);
  p.gc_attention_w = Tensor(dims.K, 1);
  for (std::size_t c : other) p.embeddings.push_back(LinearParams::make(reg[c].width, dims.E));
  p.lstm = LstmStackParams::make(dims.E, dims.K, dims.lstm_layers, true);
  for (std::size_t i = 0; i < other.size(); ++i) p.attention_w.emplace_back(dims.K, 1);
  p.component_attention = ComponentAttentionParams::make(dims.C, dims.D);
  p.head_weights = Tensor(dims.K * dims.C, dims.N);
  p.head_bias = Tensor(1, dims.N);
  return p;
}

void GCNCANetParams::init(std::uint64_t seed) {
  Rng rng = Rng(seed).derive(kInitStream);
  gcn.init(rng);
  gc_lstm.init(rng);
  init_uniform(gc_attention_w, dims.K, rng);
  for (auto& e : embeddings) e.init(rng);
  lstm.init(rng);
  for (auto& w : attention_w) init_uniform(w, dims.K, rng);
  component_attention.init(rng);
  init_uniform(head_weights, head_weights.rows(), rng);
  init_uniform(head_bias, head_weights.rows(), rng);
}

void GCNCANetParams::visit(const ParamVisitor& fn) {
  gcn.visit("gcn", fn);
  gc_lstm.visit("gc_lstm", fn);
  fn("attn.GC.w", gc_attention_w);
  std::vector<std::size_t> other = non_joint_components();
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    embeddings[i].visit("embed." + registry[other[i]].name, fn);
  lstm.visit("lstm", fn);
  for (std::size_t i = 0; i < attention_w.size(); ++i)
    fn("attn." + registry[other[i]].name + ".w", attention_w[i]);
  component_attention.visit("cattn", fn);
  fn("head.W3", head_weights);
  fn("head.b3", head_bias);
}

std::vector<std::size_t> GCNCANetParams::non_joint_components() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < registry.count(); ++i)
    if (registry[i].modality != Modality::joints) out.push_back(i);
  return out;
}

std::vector<std::string> GCNCANetParams::component_names() const {
  std::vector<std::string> names = {"GC"};
  for (std::size_t i : non_joint_components()) names.push_back(registry[i].name);
  return names;
}

ForwardVars gcn_canet_build(Tape& tape, const GCNCANetParams& p, const Window& window,
                            const BodyGraph& graph, std::vector<Var>* param_vars) {
  check_window(p.registry, window, p.dims.T);
  StagedGcn s = stage_gcn_canet(tape, p, param_vars);
  ForwardVars out;
  std::vector<Var> summaries;

  // Graph branch: per frame, stacked graph convolutions over the body graph,
  // then a mean readout over the nodes; the readout sequence feeds the
  // dedicated LSTM.
  Var a_hat = tape.leaf(graph.adjacency);
  Var joint_frames = tape.leaf(window.graph_input());  // T x 42
  std::vector<Var> readouts;
  readouts.reserve(p.dims.T);
  for (std::size_t t = 0; t < p.dims.T; ++t) {
    Var frame = tape.reshape(tape.slice_row(joint_frames, t), BodyGraph::vertex_count, 3);
    Var h = frame;
    for (Var w : s.gcn) h = gcn_layer(tape, h, w, a_hat);
    readouts.push_back(tape.mean_rows(h));
  }
  Var readout_seq = tape.concat_rows(readouts);  // T x gcn_hidden
  Var gc_hidden = tape.lstm_stack(readout_seq, s.gc_lstm, p.dims.K);
  if (p.gc_temporal_attention) {
    auto att = temporal_attention(tape, gc_hidden, s.gc_attention_w);
    out.temporal_scores.push_back(att.scores);
    summaries.push_back(att.summary);
  } else {
    // Bypass wiring: uniform weights over time.
    out.temporal_scores.push_back(
        tape.leaf(Tensor::full(p.dims.T, 1, 1.0 / static_cast<double>(p.dims.T))));
    summaries.push_back(tape.transpose(tape.mean_rows(gc_hidden)));
  }

  std::vector<std::size_t> other = p.non_joint_components();
  for (std::size_t i = 0; i < other.size(); ++i) {
    Var x = tape.leaf(window.component(other[i]));
    Var embedded = linear(tape, x, s.trunk.embeddings[i]);
    Var hidden = tape.lstm_stack(embedded, s.trunk.lstm, p.dims.K);
    auto att = temporal_attention(tape, hidden, s.trunk.attention_w[i]);
    out.temporal_scores.push_back(att.scores);
    summaries.push_back(att.summary);
  }
  Var theta = tape.concat_cols(summaries);
  auto catt =
      component_attention(tape, theta, s.trunk.component_attention, p.component_softmax_axis);
  out.component_map = catt.map;
  out.probs = classifier_head(tape, catt.weighted, s.trunk.head_weights, s.trunk.head_bias);
  return out;
}

Prediction gcn_canet_forward(const GCNCANetParams& params, const Window& window,
                             const BodyGraph& graph) {
  Tape tape;
  ForwardVars f = gcn_canet_build(tape, params, window, graph);
  return extract_prediction(tape, f, params.component_names(), params.dims.T);
}

Prediction CANetModel::predict(const Window& window) const {
  return canet_forward(params_, window);
}

Prediction CANetModel::predict_with(Tape& tape, const Window& window) {
  tape.reset();
  ForwardVars f = canet_build(tape, params_, window);
  return extract_prediction(tape, f, params_.component_names(), params_.dims.T);
}

Var CANetModel::build_loss(Tape& tape, const Window& window, std::vector<Var>& param_vars) {
  tape.reset();
  param_vars.clear();
  ForwardVars f = canet_build(tape, params_, window, &param_vars);
  return tape.cross_entropy(f.probs, window.label());
}

void CANetModel::save(const std::filesystem::path& path) const { save_model(params_, path); }

Prediction GCNCANetModel::predict(const Window& window) const {
  return gcn_canet_forward(params_, window, *graph_);
}

Prediction GCNCANetModel::predict_with(Tape& tape, const Window& window) {
  tape.reset();
  ForwardVars f = gcn_canet_build(tape, params_, window, *graph_);
  return extract_prediction(tape, f, params_.component_names(), params_.dims.T);
}

Var GCNCANetModel::build_loss(Tape& tape, const Window& window, std::vector<Var>& param_vars) {
  tape.reset();
  param_vars.clear();
  ForwardVars f = gcn_canet_build(tape, params_, window, *graph_, &param_vars);
  return tape.cross_entropy(f.probs, window.label());
}

void GCNCANetModel::save(const std::filesystem::path& path) const { save_model(params_, path); }

void check_registry(const Classifier& model, const Registry& data) {
  if (model.data_registry() == data) return;
  throw std::invalid_argument("model registry (" +
                              std::to_string(model.data_registry().count()) +
                              " components, width " +
                              std::to_string(model.data_registry().total_width()) +
                              ") does not match dataset registry (" + std::to_string(data.count()) +
                              " components, width " + std::to_string(data.total_width()) + ")");
}

}  // namespace canet
