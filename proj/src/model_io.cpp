#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "canet/model.hpp"

namespace canet {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::string axis_name(Axis a) {
  switch (a) {
    case Axis::rows: return "rows";
    case Axis::cols: return "cols";
    case Axis::flat: return "flat";
  }
  return "rows";
}

Axis axis_from_name(const std::string& s) {
  if (s == "rows") return Axis::rows;
  if (s == "cols") return Axis::cols;
  if (s == "flat") return Axis::flat;
  throw ModelLoadError(ModelLoadError::Kind::corrupt, "unknown softmax axis '" + s + "'");
}

json registry_json(const Registry& reg) {
  json out = json::array();
  for (const auto& c : reg.specs())
    out.push_back({{"name", c.name}, {"width", c.width}, {"modality", to_string(c.modality)}});
  return out;
}

Registry registry_from(const json& j) {
  std::vector<ComponentSpec> specs;
  for (const auto& c : j)
    specs.push_back({c.at("name").get<std::string>(), c.at("width").get<std::size_t>(),
                     modality_from_string(c.at("modality").get<std::string>())});
  return Registry(std::move(specs));
}

json dims_json(const ModelDims& d) {
  return {{"T", d.T}, {"C", d.C}, {"K", d.K}, {"N", d.N},
          {"E", d.E}, {"D", d.D}, {"lstm_layers", d.lstm_layers}};
}

ModelDims dims_from(const json& j) {
  ModelDims d;
  d.T = j.at("T").get<std::size_t>();
  d.C = j.at("C").get<std::size_t>();
  d.K = j.at("K").get<std::size_t>();
  d.N = j.at("N").get<std::size_t>();
  d.E = j.at("E").get<std::size_t>();
  d.D = j.at("D").get<std::size_t>();
  d.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  return d;
}

template <class Params>
json tensors_json(Params& p) {
  json out = json::object();
  p.visit([&](const std::string& name, Tensor& t) {
    json shape = json::array();
    for (std::size_t e : t.shape()) shape.push_back(e);
    json data = json::array();
    for (std::size_t i = 0; i < t.size(); ++i) data.push_back(t[i]);
    out[name] = {{"shape", shape}, {"data", data}};
  });
  return out;
}

template <class Params>
void tensors_from(const json& j, Params& p) {
  std::size_t used = 0;
  p.visit([&](const std::string& name, Tensor& t) {
    auto it = j.find(name);
    if (it == j.end())
      throw ModelLoadError(ModelLoadError::Kind::corrupt, "missing tensor '" + name + "'");
    auto shape = it->at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape())
      throw ModelLoadError(ModelLoadError::Kind::dims,
                           "tensor '" + name + "' has shape " + shape_str(shape) +
                               ", model dims require " + shape_str(t.shape()));
    const auto& data = it->at("data");
    if (data.size() != t.size())
      throw ModelLoadError(ModelLoadError::Kind::corrupt,
                           "tensor '" + name + "' has " + std::to_string(data.size()) +
                               " values for shape " + shape_str(t.shape()));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = data[i].get<double>();
    ++used;
  });
  if (used != j.size())
    throw ModelLoadError(ModelLoadError::Kind::corrupt,
                         "model file carries " + std::to_string(j.size()) +
                             " tensors, model expects " + std::to_string(used));
}

void write_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  out << j.dump(1) << "\n";
}

json read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ModelLoadError(ModelLoadError::Kind::corrupt,
                         "model file " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_model(const CANetParams& params, const std::filesystem::path& path) {
  json j;
  j["version"] = kFormatVersion;
  j["kind"] = "canet";
  j["dims"] = dims_json(params.dims);
  j["registry"] = registry_json(params.registry);
  j["decisions"] = {{"layout", "row-major"},
                    {"vec_order", "column-major"},
                    {"component_softmax_axis", axis_name(params.component_softmax_axis)},
                    {"lstm_shared", params.lstm.shared}};
  j["tensors"] = tensors_json(const_cast<CANetParams&>(params));
  write_file(j, path);
}

void save_model(const GCNCANetParams& params, const std::filesystem::path& path) {
  json j;
  j["version"] = kFormatVersion;
  j["kind"] = "gcn-canet";
  j["dims"] = dims_json(params.dims);
  j["dims"]["gcn_hidden"] = params.gcn.hidden;
  j["dims"]["gcn_layers"] = params.gcn.weights.size();
  j["registry"] = registry_json(params.registry);
  j["decisions"] = {{"layout", "row-major"},
                    {"vec_order", "column-major"},
                    {"component_softmax_axis", axis_name(params.component_softmax_axis)},
                    {"lstm_shared", params.lstm.shared},
                    {"gc_temporal_attention", params.gc_temporal_attention}};
  j["tensors"] = tensors_json(const_cast<GCNCANetParams&>(params));
  write_file(j, path);
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  json j = read_file(path);
  try {
    int version = j.at("version").get<int>();
    if (version != kFormatVersion)
      throw ModelLoadError(ModelLoadError::Kind::version,
                           "model file version " + std::to_string(version) + ", supported " +
                               std::to_string(kFormatVersion));
    std::string kind = j.at("kind").get<std::string>();
    Registry reg = registry_from(j.at("registry"));
    ModelDims dims = dims_from(j.at("dims"));
    const json& dec = j.at("decisions");
    Axis axis = axis_from_name(dec.at("component_softmax_axis").get<std::string>());
    if (kind == "canet") {
      CANetParams p = CANetParams::make(reg, dims);
      if (p.dims.C != dims.C)
        throw ModelLoadError(ModelLoadError::Kind::dims,
                             "dims C=" + std::to_string(dims.C) + " disagrees with registry (" +
                                 std::to_string(p.dims.C) + " components)");
      p.component_softmax_axis = axis;
      tensors_from(j.at("tensors"), p);
      return std::make_unique<CANetModel>(std::move(p));
    }
    if (kind == "gcn-canet") {
      std::size_t gcn_hidden = j.at("dims").at("gcn_hidden").get<std::size_t>();
      std::size_t gcn_layers = j.at("dims").at("gcn_layers").get<std::size_t>();
      GCNCANetParams p = GCNCANetParams::make(reg, dims, gcn_hidden, gcn_layers);
      if (p.dims.C != dims.C)
        throw ModelLoadError(ModelLoadError::Kind::dims,
                             "dims C=" + std::to_string(dims.C) + " disagrees with registry (" +
                                 std::to_string(p.dims.C) + " components)");
      p.component_softmax_axis = axis;
      p.gc_temporal_attention = dec.at("gc_temporal_attention").get<bool>();
      tensors_from(j.at("tensors"), p);
      return std::make_unique<GCNCANetModel>(std::move(p));
    }
    throw ModelLoadError(ModelLoadError::Kind::corrupt, "unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ModelLoadError(ModelLoadError::Kind::corrupt,
                         "model file " + path.string() + ": " + e.what());
  }
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

void write_matrix_csv(const Tensor& m, const std::string& index_name,
                      const std::vector<std::string>& names, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::string header = index_name;
  for (const auto& n : names) header += "," + n;
  out << header << "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::string row = std::to_string(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row += "," + fmt(m.at(i, j));
    out << row << "\n";
  }
}

void write_matrix_ppm(const Tensor& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << m.cols() << " " << m.rows() << "\n255\n";
  std::vector<unsigned char> row(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double lo = m.at(i, 0), hi = m.at(i, 0);
    for (std::size_t j = 1; j < m.cols(); ++j) {
      lo = std::min(lo, m.at(i, j));
      hi = std::max(hi, m.at(i, j));
    }
    for (std::size_t j = 0; j < m.cols(); ++j)
      row[j] = hi > lo ? static_cast<unsigned char>(
                             std::lround((m.at(i, j) - lo) / (hi - lo) * 255.0))
                       : 0;
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

}  // namespace

void export_attention_csv(const AttentionRecord& record, const std::filesystem::path& temporal,
                          const std::filesystem::path& component) {
  write_matrix_csv(record.temporal, "frame", record.component_names, temporal);
  write_matrix_csv(record.component, "unit", record.component_names, component);
}

void export_attention_ppm(const AttentionRecord& record, const std::filesystem::path& temporal,
                          const std::filesystem::path& component) {
  write_matrix_ppm(record.temporal, temporal);
  write_matrix_ppm(record.component, component);
}

}  // namespace canet
