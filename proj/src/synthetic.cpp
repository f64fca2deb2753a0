#include <cmath>

#include "canet/data.hpp"
#include "canet/rng.hpp"

namespace canet {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;
constexpr double kBurstCycles = 2.0;
// AR(1) joint wobble: position = base + walk, walk_t = rho*walk_{t-1} + e_t.
constexpr double kWalkRho = 0.95;
// Stationary walk std per unit noise_std; the innovation std follows from rho.
constexpr double kWalkScale = 0.032;

// Rough standing pose for the 13 stored keypoints, image coordinates in [0,1].
constexpr double kBasePose[13][2] = {
    {0.50, 0.15},  // nose
    {0.42, 0.30}, {0.58, 0.30},  // shoulders
    {0.36, 0.45}, {0.64, 0.45},  // elbows
    {0.33, 0.60}, {0.67, 0.60},  // wrists
    {0.45, 0.55}, {0.55, 0.55},  // hips
    {0.44, 0.72}, {0.56, 0.72},  // knees
    {0.43, 0.90}, {0.57, 0.90},  // ankles
};

double burst_wave(const SynthSpec& spec, std::size_t frame) {
  std::size_t u = frame % spec.burst_period;
  if (u >= spec.burst_frames) return 0.0;
  return std::sin(kTau * kBurstCycles * static_cast<double>(u) /
                  static_cast<double>(spec.burst_frames));
}

void validate(const SynthSpec& spec) {
  auto fail = [](const std::string& msg) {
    throw DataError(DataError::Kind::bad_segment, "synthetic spec: " + msg);
  };
  if (spec.segments == 0) fail("no segments");
  if (spec.frames == 0) fail("no frames");
  if (spec.registry.count() == 0) fail("empty registry");
  if (spec.classes.size() < 2) fail("need at least two classes");
  if (!spec.registry.index_of(spec.informative))
    fail("informative component '" + spec.informative + "' not in registry");
  if (spec.burst_frames == 0 || spec.burst_frames > spec.burst_period)
    fail("burst_frames must be in [1, burst_period]");
  if (spec.burst_period > spec.frames) fail("burst_period exceeds segment length");
  if (spec.noise_std < 0.0 || spec.amplitude < 0.0) fail("negative amplitude or noise");
}

}  // namespace

SynthSpec SynthSpec::flat(std::size_t noise_components) {
  SynthSpec spec;
  std::vector<ComponentSpec> comps;
  for (std::size_t i = 0; i < noise_components; ++i)
    comps.push_back({"noise" + std::to_string(i), 3, Modality::imu});
  comps.push_back({"signal", 3, Modality::imu});
  spec.registry = Registry(std::move(comps));
  spec.informative = "signal";
  return spec;
}

SynthSpec SynthSpec::skeletal() {
  SynthSpec spec;
  Registry standard = Registry::standard();
  std::vector<ComponentSpec> comps;
  for (const auto& c : standard.specs())
    if (c.modality != Modality::audio_features) comps.push_back(c);
  spec.registry = Registry(std::move(comps));
  spec.informative = "nose";  // joints modality: the burst sways the whole skeleton
  spec.skeleton = true;
  return spec;
}

Dataset synthesize(const SynthSpec& spec) {
  validate(spec);
  Dataset ds;
  ds.manifest.version = 1;
  ds.manifest.fps = spec.fps;
  ds.manifest.classes = spec.classes;
  ds.manifest.registry = spec.registry;
  ds.registry = std::make_shared<Registry>(spec.registry);
  const Registry& reg = *ds.registry;
  std::size_t informative = *reg.index_of(spec.informative);
  bool sway_skeleton = reg[informative].modality == Modality::joints;
  std::size_t width = reg.total_width();
  Rng base(spec.seed);
  int id_digits = spec.segments > 1000 ? 4 : 3;
  for (std::size_t s = 0; s < spec.segments; ++s) {
    Segment seg;
    std::string num = std::to_string(s);
    while (num.size() < static_cast<std::size_t>(id_digits)) num.insert(num.begin(), '0');
    seg.id = "seg" + num;
    seg.label = s % spec.classes.size();
    seg.fps = spec.fps;
    seg.registry = ds.registry;
    seg.frames = Tensor(spec.frames, width);
    Rng rng = base.derive(s + 1);
    bool in_class1 = seg.label == 1;
    for (std::size_t c = 0; c < reg.count(); ++c) {
      std::size_t off = reg.offset(c);
      std::size_t w = reg[c].width;
      if (spec.skeleton && reg[c].modality == Modality::joints) continue;
      for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t k = 0; k < w; ++k)
          seg.frames.at(t, off + k) = rng.gaussian(0.0, spec.noise_std);
      if (!sway_skeleton && c == informative && in_class1 && spec.amplitude > 0.0)
        for (std::size_t t = 0; t < spec.frames; ++t) {
          double b = spec.amplitude * burst_wave(spec, t);
          for (std::size_t k = 0; k < w; ++k) seg.frames.at(t, off + k) += b;
        }
    }
    if (spec.skeleton) {
      std::vector<std::size_t> joints = reg.indices_of(Modality::joints);
      double walk_std = kWalkScale * spec.noise_std;
      double innov = walk_std * std::sqrt(1.0 - kWalkRho * kWalkRho);
      double sway_amp = spec.amplitude * walk_std;
      for (std::size_t j = 0; j < joints.size(); ++j) {
        std::size_t off = reg.offset(joints[j]);
        double wx = 0.0, wy = 0.0;
        for (std::size_t t = 0; t < spec.frames; ++t) {
          wx = kWalkRho * wx + rng.gaussian(0.0, innov);
          wy = kWalkRho * wy + rng.gaussian(0.0, innov);
          double sway =
              (sway_skeleton && in_class1) ? sway_amp * burst_wave(spec, t) : 0.0;
          seg.frames.at(t, off + 0) = kBasePose[j][0] + wx + sway;
          seg.frames.at(t, off + 1) = kBasePose[j][1] + wy;
          seg.frames.at(t, off + 2) = 1.0;
        }
      }
    }
    ds.segments.push_back(std::move(seg));
  }
  return ds;
}

Dataset generate_synthetic(const SynthSpec& spec, const std::filesystem::path& dir) {
  Dataset ds = synthesize(spec);
  write_dataset(ds, dir);
  return ds;
}

}  // namespace canet
