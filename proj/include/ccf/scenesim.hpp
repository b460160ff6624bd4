#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccf/geometry.hpp"

namespace ccf {

enum class DomainKind { Source, Rain, Night, Geo };

std::string domain_name(DomainKind k);
DomainKind domain_from_name(const std::string& name);

struct DomainTag {
  DomainKind kind = DomainKind::Source;
  double severity = 0.0;  // in [0, 1]

  bool operator==(const DomainTag&) const = default;
};

struct LidarPoint {
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;

  bool operator==(const LidarPoint&) const = default;
};

struct Scene {
  std::string id;
  DomainTag domain;
  std::vector<Box3D> gt_boxes;
  std::vector<LidarPoint> points;
  std::vector<CameraModel> cameras;
};

bool operator==(const Box3D& a, const Box3D& b);
bool operator==(const Scene& a, const Scene& b);

// Object categories are fixed: 0 car-like, 1 pedestrian-like, 2 large-vehicle.
inline constexpr int kNumObjectClasses = 3;
Vec3 class_mean_size(int class_id);

struct IntRange {
  int lo = 0, hi = 0;
};

struct SimConfig {
  IntRange n_objects{4, 10};
  std::vector<double> class_weights{0.6, 0.25, 0.15};
  IntRange rays_per_object{40, 90};
  double point_noise_sigma = 0.03;
  IntRange n_clutter{150, 250};
  int n_cameras = 4;
  int image_height = 450;
  int image_width = 800;
  double hfov_deg = 90.0;
  double camera_height = 1.6;
  double scene_radius = 40.0;
  double min_object_range = 4.0;

  void validate() const;  // throws std::invalid_argument
};

// Deterministic in (cfg, seed): same inputs give bitwise-identical scenes.
// All float fields are canonicalized to 9 significant digits so scenes
// round-trip exactly through the dataset files.
Scene generate_scene(const SimConfig& cfg, std::uint64_t seed);

// Exposed for direct verification of the dropout curve. Probability that a
// point at range r is dropped; grows with range and severity, while survival
// at any range never falls below the floor.
inline constexpr double kRainDropFloor = 0.1;
double rain_drop_probability(double range, double max_range, double severity);

// Returns a corrupted copy; never touches cameras. Severity 0 only swaps the
// tag. Rain thins points with range-dependent dropout plus range jitter;
// Night is a pure tag (image degradation happens downstream); Geo rescales
// object sizes and thins density.
Scene apply_domain(const Scene& scene, const DomainTag& tag,
                   std::uint64_t seed);

struct ProposalNoise {
  double center_sigma = 0.25;   // metres, per axis
  double size_sigma = 0.1;      // metres
  double yaw_sigma = 0.05;      // radians
  double box2d_sigma_px = 2.0;  // pixel jitter per corner coordinate
  double score_sigma = 0.08;
  double fp_rate_2d = 0.3;  // expected false positives per gt, whole rig
  double fp_rate_3d = 0.2;
  double recall_2d = 0.95;
  double recall_3d = 0.98;
  // Rain degrades the 3D detector: center noise inflates with severity.
  double rain_center_inflation = 2.0;
  // Night degrades the 2D detector: corner jitter inflates with severity.
  double night_box2d_inflation = 1.0;
  // When > 0, a gt needs at least this many points inside its box (with a
  // 0.5 m margin) to yield a 3D proposal, so sparse clouds lose recall.
  int min_points_3d = 0;
};

struct Proposals {
  std::vector<std::vector<Box2D>> boxes_2d;  // per camera
  std::vector<Box3D> boxes_3d;
  // Index of the gt box each proposal came from, -1 for false positives.
  std::vector<std::vector<int>> origin_2d;
  std::vector<int> origin_3d;
};

Proposals simulate_proposals(const Scene& scene, const ProposalNoise& noise,
                             std::uint64_t seed);

// Margin used when counting points inside a (possibly jittered) box.
inline constexpr double kBoxPointMargin = 0.5;
int points_in_box(const std::vector<LidarPoint>& points, const Box3D& box,
                  double margin = kBoxPointMargin);

struct DatasetParseError : std::runtime_error {
  DatasetParseError(const std::string& msg, std::size_t scene_index,
                    std::size_t byte_offset)
      : std::runtime_error(msg), scene_index(scene_index),
        byte_offset(byte_offset) {}
  std::size_t scene_index;
  std::size_t byte_offset;
};

// One JSON object per line; floats at 9 significant digits. Scenes from
// generate_scene/apply_domain are already canonicalized, so a round trip
// reproduces them exactly.
void write_dataset(const std::vector<Scene>& scenes, const std::string& path);
std::string serialize_scene(const Scene& scene);
std::vector<Scene> read_dataset(const std::string& path);

// Canonical 9-significant-digit value (the dataset float format).
double quantize9(double v);

}  // namespace ccf
