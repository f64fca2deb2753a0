#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "canet/tensor.hpp"

namespace canet {

class DataError : public std::runtime_error {
 public:
  enum class Kind {
    manifest,
    missing_file,
    width_mismatch,
    unknown_label,
    degenerate_bbox,
    bad_segment,
  };
  DataError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class Modality { joints, imu, audio_features, other };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// One input feature stream: a joint's (x, y, v) track, one IMU sensor's
// 3-axis signal, an audio feature vector, ...
struct ComponentSpec {
  std::string name;
  std::size_t width = 0;
  Modality modality = Modality::other;

  bool operator==(const ComponentSpec&) const = default;
};

// Ordered component registry; names are unique, widths define the frame row
// layout.
class Registry {
 public:
  Registry() = default;
  explicit Registry(std::vector<ComponentSpec> specs);

  // 13 joints x3, 6 IMU x3 (two accelerometers, gyroscopes, magnetometers),
  // one 13-wide audio feature vector. Total frame width 70.
  static Registry standard();

  const std::vector<ComponentSpec>& specs() const { return specs_; }
  std::size_t count() const { return specs_.size(); }
  std::size_t total_width() const { return total_width_; }
  std::size_t offset(std::size_t component) const { return offsets_[component]; }
  const ComponentSpec& operator[](std::size_t i) const { return specs_[i]; }
  std::optional<std::size_t> index_of(const std::string& name) const;
  std::vector<std::size_t> indices_of(Modality m) const;
  std::vector<std::string> names() const;

  bool operator==(const Registry& other) const { return specs_ == other.specs_; }

 private:
  std::vector<ComponentSpec> specs_;
  std::vector<std::size_t> offsets_;
  std::size_t total_width_ = 0;
};

// One recorded take: frame rows hold all components side by side in registry
// order.
struct Segment {
  std::string id;
  std::size_t label = 0;
  double fps = 50.0;
  Tensor frames;  // T_seg x total_width
  std::shared_ptr<const Registry> registry;
};

// A view of `length` consecutive frames of a segment; the segment must
// outlive it.
struct Window {
  const Segment* segment = nullptr;
  std::size_t start = 0;
  std::size_t length = 0;

  std::size_t label() const { return segment->label; }
  const Registry& registry() const { return *segment->registry; }
  // T x width block of one component.
  Tensor component(std::size_t index) const;
  // T x 42 graph input over the 14-node body graph: the mid-shoulder
  // (node 0) is synthesized as the midpoint of the two shoulder keypoints,
  // visibility as their mean.
  Tensor graph_input() const;
};

// 14-keypoint skeleton: 0 mid-shoulder, 1 nose, 2/3 shoulders, 4/5 elbows,
// 6/7 wrists, 8/9 hips, 10/11 knees, 12/13 ankles.
struct BodyGraph {
  static constexpr std::size_t vertex_count = 14;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  Tensor adjacency;  // normalized, V x V

  static const BodyGraph& body();
};

// D^{-1/2} (A+I) D^{-1/2} with D the degree matrix of A+I. Rejects
// out-of-range vertices, duplicate edges, and explicit self-loops (loops are
// added internally).
Tensor build_normalized_adjacency(std::span<const std::pair<std::size_t, std::size_t>> edges,
                                  std::size_t vertex_count);

struct WindowingParams {
  double seconds = 3.0;
  double overlap = 0.8;
};

// fps*seconds, which must be integral.
std::size_t window_frames(double fps, double seconds);
// round(frames*(1-overlap)), ties to even.
std::size_t window_stride(std::size_t frames, double overlap);
// Starts 0, stride, 2*stride, ... while start+frames fits.
std::vector<std::size_t> window_starts(std::size_t segment_frames, std::size_t frames,
                                       std::size_t stride);

std::vector<Window> slide_windows(const Segment& segment, const WindowingParams& wp = {});
// Windows over every segment, in segment order; under-length segments are
// skipped and reported through `warnings`.
std::vector<Window> slide_all(std::span<const Segment> segments, const WindowingParams& wp = {},
                              std::vector<std::string>* warnings = nullptr);

enum class KeypointNorm { frame_bbox, segment_zscore };

// raw is T x 39: (x, y, v) per keypoint, nose first, graph order 1..13.
// frame_bbox maps x/y into [0,1] by the segment-wide bounding box;
// segment_zscore standardizes each coordinate channel. Returns T x 42 with
// the synthesized mid-shoulder prepended.
Tensor normalize_keypoints(const Tensor& raw, KeypointNorm mode, const std::string& segment_id);

struct Manifest {
  int version = 1;
  double fps = 50.0;
  std::vector<std::string> classes;
  Registry registry;
  struct Entry {
    std::string file;
    std::size_t label = 0;
  };
  std::vector<Entry> segments;
};

struct Dataset {
  Manifest manifest;
  std::shared_ptr<const Registry> registry;
  std::vector<Segment> segments;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

struct SplitResult {
  std::vector<std::size_t> train;  // segment indices, ascending
  std::vector<std::size_t> test;
};

// Seeded segment-level split; every window of a segment lands on exactly one
// side. Test size is round(test_fraction * n), clamped to [1, n-1].
SplitResult split_by_segment(std::size_t segment_count, double test_fraction,
                             std::uint64_t seed);

struct SynthSpec {
  std::size_t segments = 152;
  std::size_t frames = 515;
  Registry registry;
  std::string informative;  // component receiving the class-1 burst
  std::size_t burst_frames = 50;
  std::size_t burst_period = 150;  // default window length, so every window sees one burst
  double amplitude = 3.0;
  double noise_std = 1.0;
  bool skeleton = false;  // joints become smooth trajectories instead of raw noise
  double fps = 50.0;
  std::uint64_t seed = 0;
  std::vector<std::string> classes = {"class0", "class1"};

  // Registry for the plain generator: `noise_components` width-3 streams
  // plus one width-3 "signal" stream.
  static SynthSpec flat(std::size_t noise_components);
  // 13 joints plus 6 IMU noise streams; class signal is a whole-skeleton
  // sway, so only joint trajectories separate the classes.
  static SynthSpec skeletal();

  bool burst_frame(std::size_t frame) const { return frame % burst_period < burst_frames; }
};

// Deterministic per seed; class-balanced labels alternate 0,1,0,1,...
Dataset synthesize(const SynthSpec& spec);
// synthesize + write manifest.json and one CSV per segment.
Dataset generate_synthetic(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace canet
