#include "canet/data.hpp"

#include <algorithm>
#include <cfenv>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "canet/rng.hpp"

namespace canet {

using nlohmann::json;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::joints: return "joints";
    case Modality::imu: return "imu";
    case Modality::audio_features: return "audio-features";
    case Modality::other: return "other";
  }
  return "other";
}

Modality modality_from_string(const std::string& s) {
  if (s == "joints") return Modality::joints;
  if (s == "imu") return Modality::imu;
  if (s == "audio-features") return Modality::audio_features;
  if (s == "other") return Modality::other;
  throw DataError(DataError::Kind::manifest, "unknown modality '" + s + "'");
}

Registry::Registry(std::vector<ComponentSpec> specs) : specs_(std::move(specs)) {
  std::set<std::string> seen;
  offsets_.reserve(specs_.size());
  for (const auto& c : specs_) {
    if (c.width == 0)
      throw DataError(DataError::Kind::manifest, "component '" + c.name + "' has zero width");
    if (!seen.insert(c.name).second)
      throw DataError(DataError::Kind::manifest, "duplicate component name '" + c.name + "'");
    offsets_.push_back(total_width_);
    total_width_ += c.width;
  }
}

Registry Registry::standard() {
  std::vector<ComponentSpec> specs;
  const char* joints[] = {"nose",       "left_shoulder", "right_shoulder", "left_elbow",
                          "right_elbow", "left_wrist",    "right_wrist",    "left_hip",
                          "right_hip",  "left_knee",     "right_knee",     "left_ankle",
                          "right_ankle"};
  for (const char* j : joints) specs.push_back({j, 3, Modality::joints});
  const char* imus[] = {"acc_left", "acc_right", "gyro_left", "gyro_right", "mag_left", "mag_right"};
  for (const char* s : imus) specs.push_back({s, 3, Modality::imu});
  specs.push_back({"mfcc", 13, Modality::audio_features});
  return Registry(std::move(specs));
}

std::optional<std::size_t> Registry::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i)
    if (specs_[i].name == name) return i;
  return std::nullopt;
}

std::vector<std::size_t> Registry::indices_of(Modality m) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < specs_.size(); ++i)
    if (specs_[i].modality == m) out.push_back(i);
  return out;
}

std::vector<std::string> Registry::names() const {
  std::vector<std::string> out;
  out.reserve(specs_.size());
  for (const auto& c : specs_) out.push_back(c.name);
  return out;
}

Tensor Window::component(std::size_t index) const {
  const Registry& reg = registry();
  const ComponentSpec& spec = reg[index];
  std::size_t off = reg.offset(index);
  std::size_t w = reg.total_width();
  Tensor out(length, spec.width);
  const double* src = segment->frames.data() + start * w;
  for (std::size_t t = 0; t < length; ++t)
    std::copy(src + t * w + off, src + t * w + off + spec.width, out.data() + t * spec.width);
  return out;
}

Tensor Window::graph_input() const {
  const Registry& reg = registry();
  std::vector<std::size_t> joints = reg.indices_of(Modality::joints);
  if (joints.size() != 13)
    throw DataError(DataError::Kind::bad_segment,
                    "graph input needs 13 joint components, registry has " +
                        std::to_string(joints.size()));
  for (std::size_t j : joints)
    if (reg[j].width != 3)
      throw DataError(DataError::Kind::bad_segment,
                      "joint component '" + reg[j].name + "' has width " +
                          std::to_string(reg[j].width) + ", expected 3");
  std::size_t w = reg.total_width();
  Tensor out(length, 14 * 3);
  const double* src = segment->frames.data() + start * w;
  // graph node 0 = midpoint of nodes 2 and 3 (the shoulders)
  std::size_t ls = reg.offset(joints[1]);
  std::size_t rs = reg.offset(joints[2]);
  for (std::size_t t = 0; t < length; ++t) {
    const double* row = src + t * w;
    double* dst = out.data() + t * 42;
    for (std::size_t k = 0; k < 3; ++k) dst[k] = 0.5 * (row[ls + k] + row[rs + k]);
    for (std::size_t j = 0; j < 13; ++j) {
      std::size_t off = reg.offset(joints[j]);
      std::copy(row + off, row + off + 3, dst + 3 * (j + 1));
    }
  }
  return out;
}

Tensor build_normalized_adjacency(std::span<const std::pair<std::size_t, std::size_t>> edges,
                                  std::size_t vertex_count) {
  Tensor a(vertex_count, vertex_count);
  for (auto [u, v] : edges) {
    if (u >= vertex_count || v >= vertex_count)
      throw DataError(DataError::Kind::bad_segment,
                      "edge " + std::to_string(u) + "-" + std::to_string(v) + " out of range");
    if (u == v)
      throw DataError(DataError::Kind::bad_segment,
                      "self-loop on vertex " + std::to_string(u) + " (loops are added internally)");
    if (a.at(u, v) != 0.0)
      throw DataError(DataError::Kind::bad_segment,
                      "duplicate edge " + std::to_string(u) + "-" + std::to_string(v));
    a.at(u, v) = 1.0;
    a.at(v, u) = 1.0;
  }
  for (std::size_t i = 0; i < vertex_count; ++i) a.at(i, i) = 1.0;
  std::vector<double> degree(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < vertex_count; ++j) d += a.at(i, j);
    degree[i] = d;
  }
  for (std::size_t i = 0; i < vertex_count; ++i)
    for (std::size_t j = 0; j < vertex_count; ++j)
      a.at(i, j) /= std::sqrt(degree[i] * degree[j]);
  return a;
}

const BodyGraph& BodyGraph::body() {
  static const BodyGraph graph = [] {
    BodyGraph g;
    g.edges = {{0, 1}, {0, 2}, {0, 3}, {0, 8}, {0, 9},  {2, 4},  {3, 5},
               {4, 6}, {5, 7}, {8, 10}, {9, 11}, {10, 12}, {11, 13}};
    g.adjacency = build_normalized_adjacency(g.edges, vertex_count);
    return g;
  }();
  return graph;
}

std::size_t window_frames(double fps, double seconds) {
  double w = fps * seconds;
  double r = std::round(w);
  if (r < 1.0 || std::abs(w - r) > 1e-9)
    throw DataError(DataError::Kind::bad_segment,
                    "window length " + std::to_string(w) + " frames is not a positive integer");
  return static_cast<std::size_t>(r);
}

std::size_t window_stride(std::size_t frames, double overlap) {
  if (overlap < 0.0 || overlap >= 1.0)
    throw DataError(DataError::Kind::bad_segment, "overlap must be in [0, 1)");
  double s = std::nearbyint(static_cast<double>(frames) * (1.0 - overlap));
  return std::max<std::size_t>(1, static_cast<std::size_t>(s));
}

std::vector<std::size_t> window_starts(std::size_t segment_frames, std::size_t frames,
                                       std::size_t stride) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + frames <= segment_frames; s += stride) starts.push_back(s);
  return starts;
}

std::vector<Window> slide_windows(const Segment& segment, const WindowingParams& wp) {
  std::size_t frames = window_frames(segment.fps, wp.seconds);
  std::size_t stride = window_stride(frames, wp.overlap);
  std::vector<Window> out;
  for (std::size_t s : window_starts(segment.frames.rows(), frames, stride))
    out.push_back({&segment, s, frames});
  return out;
}

std::vector<Window> slide_all(std::span<const Segment> segments, const WindowingParams& wp,
                              std::vector<std::string>* warnings) {
  std::vector<Window> out;
  for (const Segment& seg : segments) {
    auto windows = slide_windows(seg, wp);
    if (windows.empty() && warnings)
      warnings->push_back("segment '" + seg.id + "' shorter than one window (" +
                          std::to_string(seg.frames.rows()) + " frames), skipped");
    out.insert(out.end(), windows.begin(), windows.end());
  }
  return out;
}

Tensor normalize_keypoints(const Tensor& raw, KeypointNorm mode, const std::string& segment_id) {
  if (raw.cols() != 39)
    throw DataError(DataError::Kind::width_mismatch,
                    "keypoint block for '" + segment_id + "' is " + shape_str(raw.shape()) +
                        ", expected T x 39");
  std::size_t t_count = raw.rows();
  Tensor norm(t_count, 39);
  if (mode == KeypointNorm::frame_bbox) {
    double min_x = raw[0], max_x = raw[0], min_y = raw[1], max_y = raw[1];
    for (std::size_t t = 0; t < t_count; ++t)
      for (std::size_t k = 0; k < 13; ++k) {
        double x = raw.at(t, 3 * k), y = raw.at(t, 3 * k + 1);
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    if (max_x == min_x || max_y == min_y)
      throw DataError(DataError::Kind::degenerate_bbox,
                      "segment '" + segment_id + "' has a degenerate keypoint bounding box");
    for (std::size_t t = 0; t < t_count; ++t)
      for (std::size_t k = 0; k < 13; ++k) {
        norm.at(t, 3 * k) = (raw.at(t, 3 * k) - min_x) / (max_x - min_x);
        norm.at(t, 3 * k + 1) = (raw.at(t, 3 * k + 1) - min_y) / (max_y - min_y);
        norm.at(t, 3 * k + 2) = raw.at(t, 3 * k + 2);
      }
  } else {
    for (std::size_t c = 0; c < 39; ++c) {
      if (c % 3 == 2) {  // visibility untouched
        for (std::size_t t = 0; t < t_count; ++t) norm.at(t, c) = raw.at(t, c);
        continue;
      }
      double mean = 0.0;
      for (std::size_t t = 0; t < t_count; ++t) mean += raw.at(t, c);
      mean /= static_cast<double>(t_count);
      double var = 0.0;
      for (std::size_t t = 0; t < t_count; ++t) {
        double d = raw.at(t, c) - mean;
        var += d * d;
      }
      double sd = std::sqrt(var / static_cast<double>(t_count));
      for (std::size_t t = 0; t < t_count; ++t)
        norm.at(t, c) = sd > 0.0 ? (raw.at(t, c) - mean) / sd : 0.0;
    }
  }
  Tensor out(t_count, 42);
  for (std::size_t t = 0; t < t_count; ++t) {
    // mid-shoulder from keypoints 2 and 3 (columns 3..5 and 6..8)
    for (std::size_t k = 0; k < 3; ++k)
      out.at(t, k) = 0.5 * (norm.at(t, 3 + k) + norm.at(t, 6 + k));
    for (std::size_t c = 0; c < 39; ++c) out.at(t, 3 + c) = norm.at(t, c);
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

Registry registry_from_json(const json& components) {
  std::vector<ComponentSpec> specs;
  for (const auto& c : components)
    specs.push_back({c.at("name").get<std::string>(), c.at("width").get<std::size_t>(),
                     modality_from_string(c.at("modality").get<std::string>())});
  return Registry(std::move(specs));
}

json registry_to_json(const Registry& reg) {
  json components = json::array();
  for (const auto& c : reg.specs())
    components.push_back({{"name", c.name}, {"width", c.width}, {"modality", to_string(c.modality)}});
  return components;
}

Tensor read_segment_csv(const std::filesystem::path& file, const Registry& reg,
                        const std::string& id) {
  std::ifstream in(file);
  if (!in)
    throw DataError(DataError::Kind::missing_file,
                    "segment '" + id + "': cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line))
    throw DataError(DataError::Kind::bad_segment, "segment '" + id + "': empty file");
  std::size_t header_cols = std::count(line.begin(), line.end(), ',') + 1;
  if (header_cols != reg.total_width())
    throw DataError(DataError::Kind::width_mismatch,
                    "segment '" + id + "' has " + std::to_string(header_cols) +
                        " channels, registry expects " + std::to_string(reg.total_width()));
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t col = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc())
        throw DataError(DataError::Kind::bad_segment,
                        "segment '" + id + "': bad number in row " + std::to_string(rows + 1));
      values.push_back(v);
      ++col;
      if (next == end) break;
      if (*next != ',')
        throw DataError(DataError::Kind::bad_segment,
                        "segment '" + id + "': malformed row " + std::to_string(rows + 1));
      p = next + 1;
    }
    if (col != reg.total_width())
      throw DataError(DataError::Kind::width_mismatch,
                      "segment '" + id + "' row " + std::to_string(rows + 1) + " has " +
                          std::to_string(col) + " values, registry expects " +
                          std::to_string(reg.total_width()));
    ++rows;
  }
  if (rows == 0)
    throw DataError(DataError::Kind::bad_segment, "segment '" + id + "': no frames");
  Tensor frames(rows, reg.total_width());
  std::copy(values.begin(), values.end(), frames.data());
  return frames;
}

void write_segment_csv(const Segment& seg, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::missing_file, "cannot write " + file.string());
  const Registry& reg = *seg.registry;
  std::string header;
  for (const auto& c : reg.specs())
    for (std::size_t k = 0; k < c.width; ++k) {
      if (!header.empty()) header += ',';
      header += c.name + "." + std::to_string(k);
    }
  out << header << "\n";
  std::size_t w = reg.total_width();
  for (std::size_t t = 0; t < seg.frames.rows(); ++t) {
    std::string row;
    for (std::size_t c = 0; c < w; ++c) {
      if (c) row += ',';
      row += format_double(seg.frames.at(t, c));
    }
    out << row << "\n";
  }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in)
    throw DataError(DataError::Kind::missing_file,
                    "cannot open manifest " + manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::manifest,
                    "manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.manifest.version = j.at("version").get<int>();
    ds.manifest.fps = j.at("fps").get<double>();
    ds.manifest.classes = j.at("classes").get<std::vector<std::string>>();
    ds.manifest.registry = registry_from_json(j.at("components"));
    for (const auto& s : j.at("segments"))
      ds.manifest.segments.push_back(
          {s.at("file").get<std::string>(), s.at("label").get<std::size_t>()});
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::manifest,
                    "manifest " + manifest_path.string() + ": " + e.what());
  }
  if (ds.manifest.version != 1)
    throw DataError(DataError::Kind::manifest,
                    "manifest version " + std::to_string(ds.manifest.version) + " unsupported");
  ds.registry = std::make_shared<Registry>(ds.manifest.registry);
  auto dir = manifest_path.parent_path();
  for (const auto& entry : ds.manifest.segments) {
    Segment seg;
    seg.id = std::filesystem::path(entry.file).stem().string();
    if (entry.label >= ds.manifest.classes.size())
      throw DataError(DataError::Kind::unknown_label,
                      "segment '" + seg.id + "' has label " + std::to_string(entry.label) +
                          ", manifest declares " + std::to_string(ds.manifest.classes.size()) +
                          " classes");
    seg.label = entry.label;
    seg.fps = ds.manifest.fps;
    seg.registry = ds.registry;
    seg.frames = read_segment_csv(dir / entry.file, *ds.registry, seg.id);
    ds.segments.push_back(std::move(seg));
  }
  std::sort(ds.segments.begin(), ds.segments.end(),
            [](const Segment& a, const Segment& b) { return a.id < b.id; });
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["version"] = ds.manifest.version;
  j["fps"] = ds.manifest.fps;
  j["classes"] = ds.manifest.classes;
  j["components"] = registry_to_json(*ds.registry);
  json segs = json::array();
  for (const auto& seg : ds.segments) {
    std::string file = seg.id + ".csv";
    segs.push_back({{"file", file}, {"label", seg.label}});
    write_segment_csv(seg, dir / file);
  }
  j["segments"] = segs;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out)
    throw DataError(DataError::Kind::missing_file,
                    "cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

SplitResult split_by_segment(std::size_t segment_count, double test_fraction,
                             std::uint64_t seed) {
  if (segment_count < 2)
    throw DataError(DataError::Kind::bad_segment, "cannot split fewer than 2 segments");
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw DataError(DataError::Kind::bad_segment, "test fraction must be in (0, 1)");
  std::vector<std::size_t> order(segment_count);
  for (std::size_t i = 0; i < segment_count; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  auto test_count = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(segment_count)));
  test_count = std::clamp<std::size_t>(test_count, 1, segment_count - 1);
  SplitResult split;
  split.test.assign(order.begin(), order.begin() + test_count);
  split.train.assign(order.begin() + test_count, order.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

}  // namespace canet
