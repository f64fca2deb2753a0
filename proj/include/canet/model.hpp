#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "canet/data.hpp"
#include "canet/layers.hpp"

namespace canet {

struct ModelDims {
  std::size_t T = 150;  // frames per window
  std::size_t C = 0;    // attention components
  std::size_t K = 8;    // recurrent hidden size
  std::size_t N = 2;    // classes
  std::size_t E = 8;    // per-component embedding width
  std::size_t D = 0;    // component-attention bottleneck; 0 means D = C
  std::size_t lstm_layers = 3;

  std::size_t bottleneck() const { return D == 0 ? C : D; }
};

// Temporal scores a^(c) stacked by component plus the component map B,
// captured on every forward pass.
struct AttentionRecord {
  std::vector<std::string> component_names;
  Tensor temporal;   // T x C, each column sums to 1
  Tensor component;  // K x C; with the default axis each row sums to 1
};

struct Prediction {
  Tensor probs;  // 1 x N, sums to 1
  AttentionRecord attention;
  std::size_t predicted_class() const;
};

struct CANetParams {
  ModelDims dims;
  Registry registry;
  Axis component_softmax_axis = Axis::rows;
  std::vector<LinearParams> embeddings;  // per component, not shared
  LstmStackParams lstm;                  // shared by all branches
  std::vector<Tensor> attention_w;       // per component, K x 1
  ComponentAttentionParams component_attention;
  Tensor head_weights;  // (K*C) x N
  Tensor head_bias;     // 1 x N

  static CANetParams make(const Registry& reg, ModelDims dims);
  void init(std::uint64_t seed);
  void visit(const ParamVisitor& fn);
  std::vector<std::string> component_names() const { return registry.names(); }
};

struct GCNCANetParams {
  ModelDims dims;  // C counts the GC component plus the non-joint components
  Registry registry;  // full data registry including the 13 joints
  Axis component_softmax_axis = Axis::rows;
  // GC branch summary: through its own temporal attention (default) or a
  // plain mean over time.
  bool gc_temporal_attention = true;
  GcnStackParams gcn;
  LstmStackParams gc_lstm;  // dedicated to the graph branch
  Tensor gc_attention_w;    // K x 1
  std::vector<LinearParams> embeddings;  // non-joint components
  LstmStackParams lstm;                  // shared across non-joint branches
  std::vector<Tensor> attention_w;       // non-joint components
  ComponentAttentionParams component_attention;
  Tensor head_weights;
  Tensor head_bias;

  static GCNCANetParams make(const Registry& reg, ModelDims dims, std::size_t gcn_hidden = 16,
                             std::size_t gcn_layers = 3);
  void init(std::uint64_t seed);
  void visit(const ParamVisitor& fn);
  std::vector<std::size_t> non_joint_components() const;
  // "GC" first, then the non-joint component names.
  std::vector<std::string> component_names() const;
};

// Vars for the attention/classifier outputs of a taped forward pass.
struct ForwardVars {
  Var probs;
  std::vector<Var> temporal_scores;  // per component, T x 1
  Var component_map;                 // K x C
};

ForwardVars canet_build(Tape& tape, const CANetParams& params, const Window& window,
                        std::vector<Var>* param_vars = nullptr);
ForwardVars gcn_canet_build(Tape& tape, const GCNCANetParams& params, const Window& window,
                            const BodyGraph& graph, std::vector<Var>* param_vars = nullptr);

Prediction canet_forward(const CANetParams& params, const Window& window);
Prediction gcn_canet_forward(const GCNCANetParams& params, const Window& window,
                             const BodyGraph& graph = BodyGraph::body());

// Read-only scoring surface shared by both architectures; safe to call
// concurrently from distinct threads.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string kind() const = 0;
  virtual const Registry& data_registry() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual Prediction predict(const Window& window) const = 0;
};

// A trainable classifier: exposes its parameters and can lay a per-window
// cross-entropy loss onto a tape.
class Model : public Classifier {
 public:
  virtual Var build_loss(Tape& tape, const Window& window, std::vector<Var>& param_vars) = 0;
  virtual void visit_params(const ParamVisitor& fn) = 0;
  virtual void init(std::uint64_t seed) = 0;
  virtual void save(const std::filesystem::path& path) const = 0;
  // Forward pass that reuses the caller's tape (cheaper in loops).
  virtual Prediction predict_with(Tape& tape, const Window& window) = 0;
};

class CANetModel final : public Model {
 public:
  explicit CANetModel(CANetParams params) : params_(std::move(params)) {}

  std::string kind() const override { return "canet"; }
  const Registry& data_registry() const override { return params_.registry; }
  std::size_t num_classes() const override { return params_.dims.N; }
  Prediction predict(const Window& window) const override;
  Prediction predict_with(Tape& tape, const Window& window) override;
  Var build_loss(Tape& tape, const Window& window, std::vector<Var>& param_vars) override;
  void visit_params(const ParamVisitor& fn) override { params_.visit(fn); }
  void init(std::uint64_t seed) override { params_.init(seed); }
  void save(const std::filesystem::path& path) const override;

  CANetParams& params() { return params_; }
  const CANetParams& params() const { return params_; }

 private:
  CANetParams params_;
};

class GCNCANetModel final : public Model {
 public:
  explicit GCNCANetModel(GCNCANetParams params, const BodyGraph& graph = BodyGraph::body())
      : params_(std::move(params)), graph_(&graph) {}

  std::string kind() const override { return "gcn-canet"; }
  const Registry& data_registry() const override { return params_.registry; }
  std::size_t num_classes() const override { return params_.dims.N; }
  Prediction predict(const Window& window) const override;
  Prediction predict_with(Tape& tape, const Window& window) override;
  Var build_loss(Tape& tape, const Window& window, std::vector<Var>& param_vars) override;
  void visit_params(const ParamVisitor& fn) override { params_.visit(fn); }
  void init(std::uint64_t seed) override { params_.init(seed); }
  void save(const std::filesystem::path& path) const override;

  GCNCANetParams& params() { return params_; }
  const GCNCANetParams& params() const { return params_; }

 private:
  GCNCANetParams params_;
  const BodyGraph* graph_;
};

class ModelLoadError : public std::runtime_error {
 public:
  enum class Kind { version, dims, corrupt };
  ModelLoadError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Versioned JSON with named tensors; decimal encoding round-trips doubles
// bit-exactly, so save -> load -> save reproduces identical bytes.
void save_model(const CANetParams& params, const std::filesystem::path& path);
void save_model(const GCNCANetParams& params, const std::filesystem::path& path);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

// Thrown when a model's registry disagrees with a dataset's.
void check_registry(const Classifier& model, const Registry& data);

// CSV: header row of component names after an index column, one row per
// frame (temporal) or per hidden unit (component map), shortest round-trip
// floats, LF endings. PPM: binary P5, one pixel per cell, width C, each row
// affinely mapped to [0, 255].
void export_attention_csv(const AttentionRecord& record, const std::filesystem::path& temporal,
                          const std::filesystem::path& component);
void export_attention_ppm(const AttentionRecord& record, const std::filesystem::path& temporal,
                          const std::filesystem::path& component);

}  // namespace canet
