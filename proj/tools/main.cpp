#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "canet/diagnostics.hpp"
#include "canet/fusion.hpp"
#include "canet/model.hpp"
#include "canet/train.hpp"

using namespace canet;

namespace {

// Exit codes: 0 success, 1 I/O, 2 config/flags, 3 data, 4 training.
constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTrain = 4;

struct CliError {
  int code;
  std::string message;
};

struct RunConfig {
  TrainConfig train;
  std::string model = "canet";
  std::string data;
  std::string out;
  std::size_t hidden = 8;       // LSTM width K
  std::size_t embed = 8;        // per-component embedding width E
  std::size_t bottleneck = 0;   // component-attention width D; 0 means C
  std::size_t lstm_layers = 3;
  std::size_t gcn_hidden = 16;
  std::size_t gcn_layers = 3;
  double window_seconds = 3.0;
  double overlap = 0.8;
  double test_fraction = 22.0 / 152.0;
  std::string softmax_axis = "rows";
  bool gc_temporal_attention = true;
};

bool global_json = false;
bool global_quiet = false;

void info(const std::string& msg) {
  if (!global_quiet) std::cout << msg << "\n";
}

Axis axis_from(const std::string& s) {
  if (s == "rows") return Axis::rows;
  if (s == "cols") return Axis::cols;
  if (s == "flat") return Axis::flat;
  throw CliError{kExitConfig, "softmax_axis must be rows, cols, or flat, got '" + s + "'"};
}

std::map<std::string, std::string> resolved_entries(const RunConfig& c) {
  auto fmt = [](double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
  };
  return {
      {"batch_size", std::to_string(c.train.batch_size)},
      {"beta1", fmt(c.train.beta1)},
      {"beta2", fmt(c.train.beta2)},
      {"bottleneck", std::to_string(c.bottleneck)},
      {"data", c.data},
      {"embed", std::to_string(c.embed)},
      {"epochs", std::to_string(c.train.epochs)},
      {"epsilon", fmt(c.train.epsilon)},
      {"gc_temporal_attention", c.gc_temporal_attention ? "true" : "false"},
      {"gcn_hidden", std::to_string(c.gcn_hidden)},
      {"gcn_layers", std::to_string(c.gcn_layers)},
      {"hidden", std::to_string(c.hidden)},
      {"learning_rate", fmt(c.train.learning_rate)},
      {"lstm_layers", std::to_string(c.lstm_layers)},
      {"model", c.model},
      {"out", c.out},
      {"overlap", fmt(c.overlap)},
      {"seed", std::to_string(c.train.seed)},
      {"softmax_axis", c.softmax_axis},
      {"stop_accuracy", fmt(c.train.stop_accuracy)},
      {"test_fraction", fmt(c.test_fraction)},
      {"window_seconds", fmt(c.window_seconds)},
  };
}

void apply_entry(RunConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "learning_rate") c.train.learning_rate = std::stod(value);
    else if (key == "beta1") c.train.beta1 = std::stod(value);
    else if (key == "beta2") c.train.beta2 = std::stod(value);
    else if (key == "epsilon") c.train.epsilon = std::stod(value);
    else if (key == "epochs") c.train.epochs = std::stoul(value);
    else if (key == "batch_size") c.train.batch_size = std::stoul(value);
    else if (key == "seed") c.train.seed = std::stoull(value);
    else if (key == "stop_accuracy") c.train.stop_accuracy = std::stod(value);
    else if (key == "model") c.model = value;
    else if (key == "data") c.data = value;
    else if (key == "out") c.out = value;
    else if (key == "hidden") c.hidden = std::stoul(value);
    else if (key == "embed") c.embed = std::stoul(value);
    else if (key == "bottleneck") c.bottleneck = std::stoul(value);
    else if (key == "lstm_layers") c.lstm_layers = std::stoul(value);
    else if (key == "gcn_hidden") c.gcn_hidden = std::stoul(value);
    else if (key == "gcn_layers") c.gcn_layers = std::stoul(value);
    else if (key == "window_seconds") c.window_seconds = std::stod(value);
    else if (key == "overlap") c.overlap = std::stod(value);
    else if (key == "test_fraction") c.test_fraction = std::stod(value);
    else if (key == "softmax_axis") c.softmax_axis = value;
    else if (key == "gc_temporal_attention") c.gc_temporal_attention = value == "true" || value == "1";
    else throw CliError{kExitConfig, "unknown config key '" + key + "'"};
  } catch (const std::invalid_argument&) {
    throw CliError{kExitConfig, "bad value '" + value + "' for config key '" + key + "'"};
  } catch (const std::out_of_range&) {
    throw CliError{kExitConfig, "bad value '" + value + "' for config key '" + key + "'"};
  }
}

// Plain key=value lines; '#' starts a comment.
void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError{kExitConfig, "cannot open config file " + path};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CliError{kExitConfig,
                     "config line " + std::to_string(lineno) + " is not key=value: '" + line + "'"};
    apply_entry(c, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
}

void write_resolved_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError{kExitIo, "cannot write " + path.string()};
  for (const auto& [k, v] : resolved_entries(c)) out << k << "=" << v << "\n";
}

Dataset load_data_or_throw(const std::string& path) {
  if (path.empty()) throw CliError{kExitConfig, "--data is required"};
  try {
    return load_dataset(path);
  } catch (const DataError& e) {
    throw CliError{kExitData, e.what()};
  }
}

std::vector<Window> windows_of(const Dataset& ds, const RunConfig& c) {
  std::vector<std::string> warnings;
  std::vector<Window> windows;
  try {
    windows = slide_all(ds.segments, {c.window_seconds, c.overlap}, &warnings);
  } catch (const DataError& e) {
    throw CliError{kExitData, e.what()};
  }
  for (const auto& w : warnings)
    if (!global_quiet) std::cerr << "warning: " << w << "\n";
  return windows;
}

std::unique_ptr<Model> make_model(const RunConfig& c, const Registry& reg, std::size_t frames,
                                  std::size_t classes) {
  ModelDims dims;
  dims.T = frames;
  dims.K = c.hidden;
  dims.N = classes;
  dims.E = c.embed;
  dims.D = c.bottleneck;
  dims.lstm_layers = c.lstm_layers;
  Axis axis = axis_from(c.softmax_axis);
  if (c.model == "canet") {
    CANetParams params = CANetParams::make(reg, dims);
    params.component_softmax_axis = axis;
    return std::make_unique<CANetModel>(std::move(params));
  }
  if (c.model == "gcn-canet") {
    if (reg.indices_of(Modality::joints).size() != 13)
      throw CliError{kExitData,
                     "gcn-canet needs the joints modality: dataset registry has " +
                         std::to_string(reg.indices_of(Modality::joints).size()) +
                         " joint components, expected 13"};
    GCNCANetParams params = GCNCANetParams::make(reg, dims, c.gcn_hidden, c.gcn_layers);
    params.component_softmax_axis = axis;
    params.gc_temporal_attention = c.gc_temporal_attention;
    return std::make_unique<GCNCANetModel>(std::move(params));
  }
  throw CliError{kExitConfig, "unknown model kind '" + c.model + "' (canet | gcn-canet)"};
}

std::unique_ptr<Model> load_model_or_throw(const std::string& path) {
  try {
    return load_model(path);
  } catch (const ModelLoadError& e) {
    throw CliError{kExitConfig, e.what()};
  } catch (const std::runtime_error& e) {
    throw CliError{kExitIo, e.what()};
  }
}

int cmd_gen_synth(const std::string& out, std::size_t segments, std::size_t frames,
                  std::uint64_t seed, const std::string& informative, std::size_t burst,
                  std::size_t period, double amplitude, double noise, bool skeleton,
                  std::size_t noise_components) {
  SynthSpec spec = skeleton ? SynthSpec::skeletal() : SynthSpec::flat(noise_components);
  spec.segments = segments;
  spec.frames = frames;
  spec.seed = seed;
  if (!informative.empty()) spec.informative = informative;
  spec.burst_frames = burst;
  spec.burst_period = period;
  spec.amplitude = amplitude;
  spec.noise_std = noise;
  Dataset ds;
  try {
    ds = generate_synthetic(spec, out);
  } catch (const DataError& e) {
    throw CliError{kExitConfig, e.what()};
  } catch (const std::exception& e) {
    throw CliError{kExitIo, e.what()};
  }
  std::size_t frames_per_window = window_frames(spec.fps, 3.0);
  std::size_t stride = window_stride(frames_per_window, 0.8);
  std::size_t per_segment =
      frames >= frames_per_window ? (frames - frames_per_window) / stride + 1 : 0;
  std::ostringstream summary;
  summary << segments << " segments, " << segments * per_segment << " windows";
  if (amplitude == 0.0) summary << " (degenerate: classes identical)";
  std::cout << summary.str() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const RunConfig& overrides,
              const std::vector<std::string>& override_keys) {
  RunConfig config;
  if (!config_path.empty()) load_config_file(config, config_path);
  for (const auto& key : override_keys) apply_entry(config, key, resolved_entries(overrides).at(key));
  if (config.out.empty()) throw CliError{kExitConfig, "--out is required"};

  Dataset ds = load_data_or_throw(config.data);
  std::vector<Window> windows = windows_of(ds, config);
  if (windows.empty()) throw CliError{kExitData, "dataset yields no windows"};

  SplitResult split;
  try {
    split = split_by_segment(ds.segments.size(), config.test_fraction,
                             Rng::mix(config.train.seed, kSplitStream));
  } catch (const DataError& e) {
    throw CliError{kExitData, e.what()};
  }
  std::vector<bool> is_test(ds.segments.size(), false);
  for (std::size_t i : split.test) is_test[i] = true;
  std::map<const Segment*, std::size_t> segment_index;
  for (std::size_t i = 0; i < ds.segments.size(); ++i) segment_index[&ds.segments[i]] = i;
  std::vector<Window> train_windows, test_windows;
  for (const Window& w : windows)
    (is_test[segment_index[w.segment]] ? test_windows : train_windows).push_back(w);
  if (train_windows.empty() || test_windows.empty())
    throw CliError{kExitData, "split leaves an empty side: " +
                                  std::to_string(train_windows.size()) + " train / " +
                                  std::to_string(test_windows.size()) + " test windows"};

  std::size_t frames = windows.front().length;
  auto model = make_model(config, *ds.registry, frames, ds.manifest.classes.size());
  model->init(config.train.seed);

  info("training " + config.model + " on " + std::to_string(train_windows.size()) +
       " windows (" + std::to_string(test_windows.size()) + " test)");
  History history;
  try {
    history = fit(config.train, *model, train_windows, test_windows);
  } catch (const std::exception& e) {
    throw CliError{kExitTrain, e.what()};
  }

  std::filesystem::create_directories(config.out);
  std::filesystem::path out(config.out);
  try {
    model->save(out / "model.json");
    std::ofstream hist(out / "history.json", std::ios::binary);
    hist << history_to_json(history) << "\n";
    write_resolved_config(config, out / "config.resolved");
  } catch (const std::exception& e) {
    throw CliError{kExitIo, e.what()};
  }
  if (global_json) {
    std::cout << history_to_json(history) << "\n";
  } else {
    std::ostringstream ss;
    ss << "final test accuracy " << history.final_metrics.accuracy << ", macro-F1 "
       << history.final_metrics.macro_f1 << " after " << history.epochs.size() << " epochs";
    info(ss.str());
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& out_path) {
  auto model = load_model_or_throw(model_path);
  Dataset ds = load_data_or_throw(data_path);
  RunConfig defaults;
  std::vector<Window> windows = windows_of(ds, defaults);
  if (windows.empty()) throw CliError{kExitData, "dataset yields no windows"};
  Metrics metrics;
  try {
    check_registry(*model, *ds.registry);
    metrics = evaluate(*model, windows);
  } catch (const std::invalid_argument& e) {
    throw CliError{kExitData, e.what()};
  }
  std::string json = metrics_to_json(metrics);
  std::cout << json << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw CliError{kExitIo, "cannot write " + out_path};
    out << json << "\n";
  }
  return 0;
}

int cmd_fuse(const std::vector<std::string>& model_paths, const std::string& data_path,
             const std::string& out_path) {
  if (model_paths.size() < 3)
    throw CliError{kExitConfig, "late fusion demands at least triple predictions: got " +
                                    std::to_string(model_paths.size()) + " models"};
  std::vector<std::unique_ptr<Model>> models;
  for (const auto& p : model_paths) models.push_back(load_model_or_throw(p));
  Dataset ds = load_data_or_throw(data_path);
  RunConfig defaults;
  std::vector<Window> windows = windows_of(ds, defaults);
  if (windows.empty()) throw CliError{kExitData, "dataset yields no windows"};
  std::vector<const Classifier*> voters;
  for (const auto& m : models) voters.push_back(m.get());
  Metrics metrics;
  try {
    metrics = late_fuse_evaluate(voters, windows);
  } catch (const std::invalid_argument& e) {
    throw CliError{kExitData, e.what()};
  }
  std::string json = metrics_to_json(metrics);
  std::cout << json << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw CliError{kExitIo, "cannot write " + out_path};
    out << json << "\n";
  }
  return 0;
}

int cmd_export_attention(const std::string& model_path, const std::string& data_path,
                         std::size_t window_index, const std::string& prefix) {
  auto model = load_model_or_throw(model_path);
  Dataset ds = load_data_or_throw(data_path);
  RunConfig defaults;
  std::vector<Window> windows = windows_of(ds, defaults);
  if (window_index >= windows.size())
    throw CliError{kExitConfig, "--window " + std::to_string(window_index) +
                                    " out of range: dataset yields " +
                                    std::to_string(windows.size()) + " windows"};
  Prediction pred;
  try {
    check_registry(*model, *ds.registry);
    pred = model->predict(windows[window_index]);
  } catch (const std::invalid_argument& e) {
    throw CliError{kExitData, e.what()};
  }
  std::filesystem::path base(prefix);
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  try {
    export_attention_csv(pred.attention, prefix + "_temporal.csv", prefix + "_component.csv");
    export_attention_ppm(pred.attention, prefix + "_temporal.ppm", prefix + "_component.ppm");
  } catch (const std::exception& e) {
    throw CliError{kExitIo, e.what()};
  }
  std::ostringstream ss;
  ss << "wrote " << prefix << "_{temporal,component}.{csv,ppm} for window " << window_index
     << " (" << pred.attention.component_names.size() << " components, predicted class "
     << pred.predicted_class() << ")";
  info(ss.str());
  return 0;
}

int cmd_gradcheck(std::size_t seeds) {
  auto checks = gradient_suite(seeds);
  for (const auto& c : checks) {
    std::ostringstream ss;
    ss << (c.report.pass ? "PASS " : "FAIL ") << c.name << ": max rel err "
       << c.report.max_rel_err << " over " << c.report.coords << " coordinates";
    std::cout << ss.str() << "\n";
  }
  return all_pass(checks) ? 0 : kExitTrain;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"component attention networks for multimodal sequence classification"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::uint64_t global_seed = 0;
  bool seed_set = false;
  app.add_flag("--json", global_json, "machine-readable output on stdout");
  app.add_flag("--quiet", global_quiet, "suppress progress messages");
  auto* seed_opt = app.add_option("--seed", global_seed, "override the experiment seed");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic dataset");
  std::string gen_out;
  std::size_t gen_segments = 152, gen_frames = 515, gen_burst = 50, gen_period = 150;
  std::size_t gen_noise_comps = 6;
  std::uint64_t gen_seed = 0;
  std::string gen_informative;
  double gen_amplitude = 3.0, gen_noise = 1.0;
  bool gen_skeleton = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--segments", gen_segments, "segment count");
  gen->add_option("--frames", gen_frames, "frames per segment");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--informative", gen_informative, "component carrying the class signal");
  gen->add_option("--burst", gen_burst, "burst frames per period");
  gen->add_option("--period", gen_period, "burst period in frames");
  gen->add_option("--amplitude", gen_amplitude, "burst amplitude");
  gen->add_option("--noise", gen_noise, "background noise std");
  gen->add_flag("--skeleton", gen_skeleton, "emit joint trajectories for the body graph");
  gen->add_option("--noise-components", gen_noise_comps, "noise streams beside the signal");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  std::string train_config;
  RunConfig cli_overrides;
  train_cmd->add_option("--config", train_config, "key=value config file");
  auto* opt_data = train_cmd->add_option("--data", cli_overrides.data, "manifest.json path");
  auto* opt_model = train_cmd->add_option("--model", cli_overrides.model, "canet | gcn-canet");
  auto* opt_out = train_cmd->add_option("--out", cli_overrides.out, "output directory");
  auto* opt_epochs = train_cmd->add_option("--epochs", cli_overrides.train.epochs, "epoch budget");
  auto* opt_lr = train_cmd->add_option("--lr", cli_overrides.train.learning_rate, "learning rate");
  auto* opt_batch = train_cmd->add_option("--batch", cli_overrides.train.batch_size, "batch size");
  auto* opt_stop =
      train_cmd->add_option("--stop-accuracy", cli_overrides.train.stop_accuracy,
                            "stop once test accuracy reaches this value (0 disables)");
  auto* opt_tf =
      train_cmd->add_option("--test-fraction", cli_overrides.test_fraction, "test split fraction");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model");
  std::string eval_model, eval_data, eval_out;
  eval_cmd->add_option("--model", eval_model, "model file")->required();
  eval_cmd->add_option("--data", eval_data, "manifest.json path")->required();
  eval_cmd->add_option("--out", eval_out, "also write metrics JSON here");

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "late-fuse several models by voting");
  std::vector<std::string> fuse_models;
  std::string fuse_data, fuse_out;
  fuse_cmd->add_option("--model", fuse_models, "model file (repeat at least three times)");
  fuse_cmd->add_option("--data", fuse_data, "manifest.json path")->required();
  fuse_cmd->add_option("--out", fuse_out, "also write metrics JSON here");

  // export-attention
  auto* export_cmd = app.add_subcommand("export-attention", "write attention heat maps");
  std::string exp_model, exp_data, exp_prefix;
  std::size_t exp_window = 0;
  export_cmd->add_option("--model", exp_model, "model file")->required();
  export_cmd->add_option("--data", exp_data, "manifest.json path")->required();
  export_cmd->add_option("--window", exp_window, "window index");
  export_cmd->add_option("--out", exp_prefix, "output path prefix")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::size_t grad_seeds = 5;
  grad_cmd->add_option("--seeds", grad_seeds, "random seeds per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  seed_set = seed_opt->count() > 0;

  try {
    if (gen->parsed()) {
      if (seed_set) gen_seed = global_seed;
      return cmd_gen_synth(gen_out, gen_segments, gen_frames, gen_seed, gen_informative,
                           gen_burst, gen_period, gen_amplitude, gen_noise, gen_skeleton,
                           gen_noise_comps);
    }
    if (train_cmd->parsed()) {
      std::vector<std::string> keys;
      if (opt_data->count()) keys.push_back("data");
      if (opt_model->count()) keys.push_back("model");
      if (opt_out->count()) keys.push_back("out");
      if (opt_epochs->count()) keys.push_back("epochs");
      if (opt_lr->count()) keys.push_back("learning_rate");
      if (opt_batch->count()) keys.push_back("batch_size");
      if (opt_stop->count()) keys.push_back("stop_accuracy");
      if (opt_tf->count()) keys.push_back("test_fraction");
      if (seed_set) {
        cli_overrides.train.seed = global_seed;
        keys.push_back("seed");
      }
      return cmd_train(train_config, cli_overrides, keys);
    }
    if (eval_cmd->parsed()) return cmd_eval(eval_model, eval_data, eval_out);
    if (fuse_cmd->parsed()) return cmd_fuse(fuse_models, fuse_data, fuse_out);
    if (export_cmd->parsed())
      return cmd_export_attention(exp_model, exp_data, exp_window, exp_prefix);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_seeds);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}
