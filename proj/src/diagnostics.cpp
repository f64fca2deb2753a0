#include "canet/diagnostics.hpp"

#include <functional>

#include "canet/model.hpp"
#include "canet/rng.hpp"

namespace canet {

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

GradCheckReport check_program(const std::function<Var(Tape&, std::vector<Var>&)>& build,
                              std::vector<GradCheckTarget> targets, double tol) {
  auto loss_fn = [&]() {
    Tape tape;
    std::vector<Var> vars;
    return tape.value(build(tape, vars)).item();
  };
  auto grad_fn = [&]() {
    Tape tape;
    std::vector<Var> vars;
    Var loss = build(tape, vars);
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (Var v : vars) grads.push_back(tape.grad(v));
    return grads;
  };
  return gradcheck(loss_fn, grad_fn, targets, 1e-5, tol);
}

GradCheckReport worst(GradCheckReport a, const GradCheckReport& b) {
  if (b.max_rel_err > a.max_rel_err) {
    double tol = a.tol;
    a = b;
    a.tol = tol;
  }
  a.pass = a.max_rel_err < a.tol;
  return a;
}

GradCheckReport linear_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  LinearParams p = LinearParams::make(3, 4);
  p.init(rng);
  Tensor x = random_tensor(5, 3, rng);
  return check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        LinearVars staged = stage(tape, p);
        Var xv = tape.leaf(x, true);
        vars = {staged.weights, staged.bias, xv};
        return tape.sum(tape.tanh(linear(tape, xv, staged)));
      },
      {{"W", &p.weights}, {"b", &p.bias}, {"x", &x}}, tol);
}

GradCheckReport lstm_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  LstmStackParams p = LstmStackParams::make(3, 4, 3, true);
  p.init(rng);
  Tensor x = random_tensor(6, 3, rng);
  std::vector<GradCheckTarget> targets;
  p.visit("lstm", [&](const std::string& n, Tensor& t) { targets.push_back({n, &t}); });
  targets.push_back({"x", &x});
  return check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        auto staged = stage(tape, p);
        for (auto& l : staged) {
          vars.push_back(l.input_weights);
          vars.push_back(l.recurrent_weights);
          vars.push_back(l.bias);
        }
        Var xv = tape.leaf(x, true);
        vars.push_back(xv);
        return tape.sum(tape.tanh(lstm_forward(tape, staged, xv, 4)));
      },
      targets, tol);
}

GradCheckReport temporal_attention_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor h = random_tensor(6, 4, rng);
  Tensor w = random_tensor(4, 1, rng);
  return check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        Var hv = tape.leaf(h, true);
        Var wv = tape.leaf(w, true);
        vars = {hv, wv};
        auto res = temporal_attention(tape, hv, wv);
        return tape.sum(tape.mul(res.summary, res.summary));
      },
      {{"H", &h}, {"w", &w}}, tol);
}

GradCheckReport component_attention_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor theta = random_tensor(3, 4, rng);
  ComponentAttentionParams p = ComponentAttentionParams::make(4, 3);
  p.init(rng);
  std::vector<GradCheckTarget> targets = {{"theta", &theta}};
  p.visit("cattn", [&](const std::string& n, Tensor& t) { targets.push_back({n, &t}); });
  return check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        Var tv = tape.leaf(theta, true);
        auto staged = stage(tape, p);
        vars = {tv, staged.W1, staged.b1, staged.W2, staged.b2};
        auto res = component_attention(tape, tv, staged);
        return tape.sum(tape.mul(res.weighted, res.weighted));
      },
      targets, tol);
}

GradCheckReport gcn_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  GcnStackParams p = GcnStackParams::make(3, 5, 3);
  p.init(rng);
  Tensor x = random_tensor(BodyGraph::vertex_count, 3, rng);
  std::vector<GradCheckTarget> targets = {{"x", &x}};
  p.visit("gcn", [&](const std::string& n, Tensor& t) { targets.push_back({n, &t}); });
  return check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        Var xv = tape.leaf(x, true);
        auto staged = stage(tape, p);
        vars = {xv};
        for (Var w : staged) vars.push_back(w);
        Var h = xv;
        Var a_hat = tape.leaf(BodyGraph::body().adjacency);
        for (Var w : staged) h = gcn_layer(tape, h, w, a_hat);
        return tape.sum(tape.mul(h, h));
      },
      targets, tol);
}

GradCheckReport head_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor o = random_tensor(3, 4, rng);
  Tensor w = random_tensor(12, 2, rng);
  Tensor b = random_tensor(1, 2, rng);
  return check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        Var ov = tape.leaf(o, true);
        Var wv = tape.leaf(w, true);
        Var bv = tape.leaf(b, true);
        vars = {ov, wv, bv};
        return tape.cross_entropy(classifier_head(tape, ov, wv, bv), seed % 2);
      },
      {{"O", &o}, {"W3", &w}, {"b3", &b}}, tol);
}

GradCheckReport cross_entropy_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor logits = random_tensor(1, 3, rng, 2.0);
  return check_program(
      [&](Tape& tape, std::vector<Var>& vars) {
        Var lv = tape.leaf(logits, true);
        vars = {lv};
        return tape.cross_entropy(tape.softmax(lv, Axis::rows), seed % 3);
      },
      {{"logits", &logits}}, tol);
}

Segment random_segment(std::shared_ptr<const Registry> reg, std::size_t frames, Rng& rng,
                       std::size_t label) {
  Segment seg;
  seg.id = "diag";
  seg.label = label;
  seg.registry = std::move(reg);
  seg.frames = Tensor(frames, seg.registry->total_width());
  for (std::size_t i = 0; i < seg.frames.size(); ++i) seg.frames[i] = rng.uniform(-1.0, 1.0);
  return seg;
}

GradCheckReport canet_check(std::uint64_t seed, double tol) {
  auto reg = std::make_shared<Registry>(
      Registry({{"a", 2, Modality::imu}, {"b", 3, Modality::other}, {"c", 1, Modality::imu}}));
  ModelDims dims{.T = 4, .K = 3, .N = 2, .E = 3, .lstm_layers = 2};
  CANetParams params = CANetParams::make(*reg, dims);
  params.init(seed);
  Rng rng(seed * 5 + 1);
  Segment seg = random_segment(reg, 6, rng, seed % 2);
  Window window{&seg, 1, 4};
  std::vector<GradCheckTarget> targets;
  params.visit([&](const std::string& n, Tensor& t) { targets.push_back({n, &t}); });
  auto loss_fn = [&]() {
    Tape tape;
    ForwardVars f = canet_build(tape, params, window);
    return tape.value(tape.cross_entropy(f.probs, window.label())).item();
  };
  auto grad_fn = [&]() {
    Tape tape;
    std::vector<Var> vars;
    ForwardVars f = canet_build(tape, params, window, &vars);
    tape.backward(tape.cross_entropy(f.probs, window.label()));
    std::vector<Tensor> grads;
    for (Var v : vars) grads.push_back(tape.grad(v));
    return grads;
  };
  return gradcheck(loss_fn, grad_fn, targets, 1e-5, tol);
}

GradCheckReport gcn_canet_check(std::uint64_t seed, double tol) {
  Registry standard = Registry::standard();
  std::vector<ComponentSpec> specs;
  for (const auto& c : standard.specs())
    if (c.modality == Modality::joints) specs.push_back(c);
  specs.push_back({"imu_a", 2, Modality::imu});
  specs.push_back({"imu_b", 2, Modality::imu});
  auto reg = std::make_shared<Registry>(Registry(specs));
  ModelDims dims{.T = 3, .K = 3, .N = 2, .E = 3, .lstm_layers = 2};
  GCNCANetParams params = GCNCANetParams::make(*reg, dims, 4, 2);
  params.init(seed);
  Rng rng(seed * 7 + 3);
  Segment seg = random_segment(reg, 5, rng, seed % 2);
  Window window{&seg, 0, 3};
  std::vector<GradCheckTarget> targets;
  params.visit([&](const std::string& n, Tensor& t) { targets.push_back({n, &t}); });
  auto loss_fn = [&]() {
    Tape tape;
    ForwardVars f = gcn_canet_build(tape, params, window, BodyGraph::body());
    return tape.value(tape.cross_entropy(f.probs, window.label())).item();
  };
  auto grad_fn = [&]() {
    Tape tape;
    std::vector<Var> vars;
    ForwardVars f = gcn_canet_build(tape, params, window, BodyGraph::body(), &vars);
    tape.backward(tape.cross_entropy(f.probs, window.label()));
    std::vector<Tensor> grads;
    for (Var v : vars) grads.push_back(tape.grad(v));
    return grads;
  };
  return gradcheck(loss_fn, grad_fn, targets, 1e-5, tol);
}

}  // namespace

std::vector<SuiteCheck> gradient_suite(std::size_t seeds, double tol) {
  using CheckFn = GradCheckReport (*)(std::uint64_t, double);
  std::pair<const char*, CheckFn> checks[] = {
      {"linear", linear_check},
      {"lstm_stack", lstm_check},
      {"temporal_attention", temporal_attention_check},
      {"component_attention", component_attention_check},
      {"gcn_layer_x3", gcn_check},
      {"classifier_head", head_check},
      {"cross_entropy", cross_entropy_check},
      {"canet_full", canet_check},
      {"gcn_canet_full", gcn_canet_check},
  };
  std::vector<SuiteCheck> out;
  for (auto [name, fn] : checks) {
    GradCheckReport agg;
    agg.tol = tol;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) agg = worst(agg, fn(seed, tol));
    agg.pass = agg.max_rel_err < tol;
    out.push_back({name, agg});
  }
  return out;
}

bool all_pass(const std::vector<SuiteCheck>& checks) {
  for (const auto& c : checks)
    if (!c.report.pass) return false;
  return true;
}

}  // namespace canet
