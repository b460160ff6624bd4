#include "ccf/scenesim.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "ccf/rng.hpp"

namespace ccf {

namespace {

// Largest point range in the scene, used as the reference range for
// range-dependent corruption and false-positive placement.
double scene_max_range(const Scene& s) {
  double r = 1.0;
  for (const auto& p : s.points) r = std::max(r, p.position.norm());
  return r;
}

constexpr double kGeoSizeShift = 0.25;
constexpr double kGeoSizeJitter = 0.05;
constexpr double kGeoDensityDrop = 0.2;
constexpr double kRainRangeJitter = 0.05;  // metres at severity 1

const Vec3 kClassSizes[kNumObjectClasses] = {
    {4.5, 1.9, 1.7},  // car-like
    {0.7, 0.7, 1.75},  // pedestrian-like
    {8.0, 2.6, 3.2},  // large-vehicle
};

void quantize_box(Box3D& b) {
  for (int d = 0; d < 3; ++d) {
    b.center(d) = quantize9(b.center(d));
    b.size(d) = quantize9(b.size(d));
  }
  b.yaw = quantize9(b.yaw);
  b.score = quantize9(b.score);
}

void quantize_scene(Scene& s) {
  for (auto& b : s.gt_boxes) quantize_box(b);
  for (auto& p : s.points) {
    for (int d = 0; d < 3; ++d) p.position(d) = quantize9(p.position(d));
    p.intensity = quantize9(p.intensity);
  }
  for (auto& cam : s.cameras) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        cam.intrinsics(r, c) = quantize9(cam.intrinsics(r, c));
        cam.rotation(r, c) = quantize9(cam.rotation(r, c));
      }
      cam.translation(r) = quantize9(cam.translation(r));
    }
  }
}

int sample_class(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform01() * total;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    u -= weights[k];
    if (u < 0) return int(k);
  }
  return int(weights.size()) - 1;
}

// Surface point in box-local coordinates, faces weighted by area.
Vec3 sample_on_box(Rng& rng, const Vec3& size) {
  const double l = size.x(), w = size.y(), h = size.z();
  const double areas[3] = {w * h, l * h, l * w};  // +-x, +-y, +-z face pairs
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  double u = rng.uniform01() * total;
  int axis = 0;
  double side = 1.0;
  for (int a = 0; a < 3; ++a) {
    for (double sgn : {-1.0, 1.0}) {
      u -= areas[a];
      if (u < 0) {
        axis = a;
        side = sgn;
        goto picked;
      }
    }
  }
picked:
  const double s = rng.uniform01() - 0.5;
  const double t = rng.uniform01() - 0.5;
  Vec3 p;
  if (axis == 0)
    p = Vec3(0.5 * side * l, s * w, t * h);
  else if (axis == 1)
    p = Vec3(s * l, 0.5 * side * w, t * h);
  else
    p = Vec3(s * l, t * w, 0.5 * side * h);
  return p;
}

}  // namespace

std::string domain_name(DomainKind k) {
  switch (k) {
    case DomainKind::Source: return "source";
    case DomainKind::Rain: return "rain";
    case DomainKind::Night: return "night";
    case DomainKind::Geo: return "geo";
  }
  return "source";
}

DomainKind domain_from_name(const std::string& name) {
  if (name == "source") return DomainKind::Source;
  if (name == "rain") return DomainKind::Rain;
  if (name == "night") return DomainKind::Night;
  if (name == "geo") return DomainKind::Geo;
  throw std::invalid_argument("unknown domain name: " + name);
}

bool operator==(const Box3D& a, const Box3D& b) {
  return a.center == b.center && a.size == b.size && a.yaw == b.yaw &&
         a.score == b.score && a.class_id == b.class_id;
}

bool operator==(const Scene& a, const Scene& b) {
  return a.id == b.id && a.domain == b.domain && a.gt_boxes == b.gt_boxes &&
         a.points == b.points && a.cameras == b.cameras;
}

Vec3 class_mean_size(int class_id) {
  if (class_id < 0 || class_id >= kNumObjectClasses)
    throw std::invalid_argument("class_mean_size: bad class id");
  return kClassSizes[class_id];
}

void SimConfig::validate() const {
  auto bad = [](const char* what) {
    throw std::invalid_argument(std::string("sim config: ") + what);
  };
  if (n_objects.lo < 0 || n_objects.hi < n_objects.lo) bad("n_objects range");
  if (class_weights.size() != kNumObjectClasses) bad("class weight count");
  double wsum = 0;
  for (double w : class_weights) {
    if (w < 0) bad("negative class weight");
    wsum += w;
  }
  if (wsum <= 0) bad("class weights sum to zero");
  if (rays_per_object.lo < 0 || rays_per_object.hi < rays_per_object.lo)
    bad("rays_per_object range");
  if (point_noise_sigma < 0) bad("negative point noise");
  if (n_clutter.lo < 0 || n_clutter.hi < n_clutter.lo) bad("n_clutter range");
  if (n_cameras < 1) bad("need at least one camera");
  if (image_height <= 0 || image_width <= 0) bad("image size");
  if (!(hfov_deg > 0 && hfov_deg < 180)) bad("horizontal fov");
  if (!(scene_radius > 0)) bad("scene radius");
  if (!(min_object_range >= 0 && min_object_range < scene_radius))
    bad("min object range");
}

Scene generate_scene(const SimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Scene scene;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene-%016" PRIx64, seed);
    scene.id = buf;
  }
  scene.domain = DomainTag{DomainKind::Source, 0.0};

  // Camera ring at the origin, z forward along the heading, y down.
  const double focal =
      0.5 * cfg.image_width / std::tan(0.5 * cfg.hfov_deg * M_PI / 180.0);
  for (int c = 0; c < cfg.n_cameras; ++c) {
    const double phi = 2.0 * M_PI * c / cfg.n_cameras;
    const double ch = std::cos(phi), sh = std::sin(phi);
    Mat3 rot;
    rot.row(0) = Vec3(sh, -ch, 0);   // camera x (right)
    rot.row(1) = Vec3(0, 0, -1);     // camera y (down)
    rot.row(2) = Vec3(ch, sh, 0);    // camera z (forward)
    const Vec3 center(0, 0, cfg.camera_height);
    CameraModel cam = make_camera(focal, cfg.image_height, cfg.image_width,
                                  rot, -rot * center);
    scene.cameras.push_back(cam);
  }

  const int n_obj = int(rng.uniform_int(cfg.n_objects.lo, cfg.n_objects.hi));
  const double r_max = 0.85 * cfg.scene_radius;
  for (int i = 0; i < n_obj; ++i) {
    Box3D box;
    box.class_id = sample_class(rng, cfg.class_weights);
    const Vec3 mean = class_mean_size(box.class_id);
    for (int d = 0; d < 3; ++d)
      box.size(d) =
          std::max(0.3 * mean(d), mean(d) * (1.0 + 0.08 * rng.normal()));
    // Rejection keeps object centers from stacking on top of each other.
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double rr = std::sqrt(
          rng.uniform(cfg.min_object_range * cfg.min_object_range,
                      r_max * r_max));
      const double phi = rng.uniform(0, 2.0 * M_PI);
      box.center = Vec3(rr * std::cos(phi), rr * std::sin(phi),
                        0.5 * box.size.z());
      bool ok = true;
      for (const auto& other : scene.gt_boxes) {
        const double dx = box.center.x() - other.center.x();
        const double dy = box.center.y() - other.center.y();
        if (std::sqrt(dx * dx + dy * dy) < 3.0) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    box.yaw = rng.uniform(-M_PI, M_PI);
    box.score = 1.0;
    scene.gt_boxes.push_back(box);

    const int rays =
        int(rng.uniform_int(cfg.rays_per_object.lo, cfg.rays_per_object.hi));
    const double cy = std::cos(box.yaw), sy = std::sin(box.yaw);
    for (int k = 0; k < rays; ++k) {
      const Vec3 local = sample_on_box(rng, box.size);
      Vec3 world = box.center + Vec3(cy * local.x() - sy * local.y(),
                                     sy * local.x() + cy * local.y(),
                                     local.z());
      for (int d = 0; d < 3; ++d)
        world(d) += rng.normal(0, cfg.point_noise_sigma);
      scene.points.push_back({world, rng.uniform(0.1, 1.0)});
    }
  }

  const int n_clutter =
      int(rng.uniform_int(cfg.n_clutter.lo, cfg.n_clutter.hi));
  for (int k = 0; k < n_clutter; ++k) {
    const double rr = cfg.scene_radius * std::sqrt(rng.uniform01());
    const double phi = rng.uniform(0, 2.0 * M_PI);
    const Vec3 pos(rr * std::cos(phi), rr * std::sin(phi),
                   rng.normal(0, 0.05));
    scene.points.push_back({pos, rng.uniform(0.05, 0.4)});
  }

  quantize_scene(scene);
  return scene;
}

double rain_drop_probability(double range, double max_range, double severity) {
  if (!(max_range > 0))
    throw std::invalid_argument("rain_drop_probability: max_range <= 0");
  const double x =
      std::min(1.0, std::max(kRainDropFloor, range / max_range));
  // Survival never drops below the floor, so even saturated rain keeps a
  // sliver of far-range returns.
  return std::min(severity * x, 1.0 - kRainDropFloor);
}

Scene apply_domain(const Scene& scene, const DomainTag& tag,
                   std::uint64_t seed) {
  if (tag.severity < 0 || tag.severity > 1)
    throw std::invalid_argument("apply_domain: severity outside [0, 1]");
  Scene out = scene;
  out.domain = tag;
  if (tag.severity == 0 || tag.kind == DomainKind::Source ||
      tag.kind == DomainKind::Night)
    return out;  // night degrades the image model downstream, not the points

  Rng rng(seed);
  if (tag.kind == DomainKind::Rain) {
    const double r_max = scene_max_range(out);
    std::vector<LidarPoint> kept;
    kept.reserve(out.points.size());
    for (const auto& p : out.points) {
      const double r = p.position.norm();
      if (rng.bernoulli(rain_drop_probability(r, r_max, tag.severity)))
        continue;
      LidarPoint q = p;
      if (r > 1e-9) {
        const double jitter = rng.normal(0, kRainRangeJitter * tag.severity);
        q.position *= (1.0 + jitter / r);
      }
      kept.push_back(q);
    }
    out.points = std::move(kept);
  } else if (tag.kind == DomainKind::Geo) {
    // Grow each object about its ground point and carry the points sampled
    // on it through the same scaling, then thin density uniformly.
    std::vector<int> owner(out.points.size(), -1);
    for (std::size_t b = 0; b < out.gt_boxes.size(); ++b)
      for (std::size_t i = 0; i < out.points.size(); ++i)
        if (owner[i] < 0 &&
            box3d_contains(out.gt_boxes[b], out.points[i].position, 0.3))
          owner[i] = int(b);
    std::vector<Vec3> pivots(out.gt_boxes.size());
    std::vector<double> scales(out.gt_boxes.size(), 1.0);
    for (std::size_t b = 0; b < out.gt_boxes.size(); ++b) {
      double s = (1.0 + kGeoSizeShift * tag.severity) *
                 (1.0 + kGeoSizeJitter * tag.severity * rng.normal());
      scales[b] = std::max(0.5, s);
      Box3D& box = out.gt_boxes[b];
      pivots[b] = box.center - Vec3(0, 0, 0.5 * box.size.z());
      box.size *= scales[b];
      box.center = pivots[b] + Vec3(0, 0, 0.5 * box.size.z());
    }
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (owner[i] < 0) continue;
      const Vec3& pivot = pivots[owner[i]];
      out.points[i].position =
          pivot + scales[owner[i]] * (out.points[i].position - pivot);
    }
    std::vector<LidarPoint> kept;
    kept.reserve(out.points.size());
    for (const auto& p : out.points)
      if (!rng.bernoulli(kGeoDensityDrop * tag.severity)) kept.push_back(p);
    out.points = std::move(kept);
  }

  quantize_scene(out);
  return out;
}

Proposals simulate_proposals(const Scene& scene, const ProposalNoise& noise,
                             std::uint64_t seed) {
  Rng rng(seed);
  Proposals out;
  const int n_gt = int(scene.gt_boxes.size());
  const bool rain = scene.domain.kind == DomainKind::Rain;
  const bool night = scene.domain.kind == DomainKind::Night;
  const double sev = scene.domain.severity;

  const double center_sigma =
      noise.center_sigma * (rain ? 1.0 + noise.rain_center_inflation * sev
                                 : 1.0);
  for (int gt_index = 0; gt_index < n_gt; ++gt_index) {
    const Box3D& gt = scene.gt_boxes[gt_index];
    if (noise.min_points_3d > 0 &&
        points_in_box(scene.points, gt) < noise.min_points_3d)
      continue;
    if (!rng.bernoulli(noise.recall_3d)) continue;
    Box3D p = gt;
    for (int d = 0; d < 3; ++d)
      p.center(d) += rng.normal(0, center_sigma);
    for (int d = 0; d < 3; ++d)
      p.size(d) = std::max(0.15, p.size(d) + rng.normal(0, noise.size_sigma));
    p.yaw = wrap_angle(p.yaw + rng.normal(0, noise.yaw_sigma));
    p.score = std::clamp(1.0 - std::abs(rng.normal(0, noise.score_sigma)),
                         0.05, 1.0);
    out.boxes_3d.push_back(p);
    out.origin_3d.push_back(gt_index);
  }
  const int n_fp3 = rng.poisson(noise.fp_rate_3d * std::max(1, n_gt));
  const double fp_range = 0.9 * scene_max_range(scene);
  for (int k = 0; k < n_fp3; ++k) {
    Box3D p;
    p.class_id = int(rng.uniform_int(0, kNumObjectClasses - 1));
    const double rad = std::sqrt(rng.uniform01()) * fp_range;
    const double phi = rng.uniform(0, 2.0 * M_PI);
    p.center = Vec3(rad * std::cos(phi), rad * std::sin(phi),
                    rng.uniform(0.4, 2.2));
    const Vec3 mean = class_mean_size(p.class_id);
    for (int d = 0; d < 3; ++d)
      p.size(d) = std::max(0.2, mean(d) * (1.0 + 0.15 * rng.normal()));
    p.yaw = rng.uniform(-M_PI, M_PI);
    p.score = rng.uniform(0.05, 0.65);
    out.boxes_3d.push_back(p);
    out.origin_3d.push_back(-1);
  }

  const double px_sigma =
      noise.box2d_sigma_px *
      (night ? 1.0 + noise.night_box2d_inflation * sev : 1.0);
  out.boxes_2d.resize(scene.cameras.size());
  out.origin_2d.resize(scene.cameras.size());
  for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
    const CameraModel& cam = scene.cameras[c];
    for (int gt_index = 0; gt_index < n_gt; ++gt_index) {
      const Box3D& gt = scene.gt_boxes[gt_index];
      const auto pb = project_box3d(cam, gt);
      if (!pb) continue;
      if (!rng.bernoulli(noise.recall_2d)) continue;
      Box2D b = *pb;
      b.x_min += rng.normal(0, px_sigma);
      b.x_max += rng.normal(0, px_sigma);
      b.y_min += rng.normal(0, px_sigma);
      b.y_max += rng.normal(0, px_sigma);
      b.x_min = std::clamp(b.x_min, 0.0, double(cam.width));
      b.x_max = std::clamp(b.x_max, 0.0, double(cam.width));
      b.y_min = std::clamp(b.y_min, 0.0, double(cam.height));
      b.y_max = std::clamp(b.y_max, 0.0, double(cam.height));
      b.score = std::clamp(1.0 - std::abs(rng.normal(0, noise.score_sigma)),
                           0.05, 1.0);
      if (!(b.x_min < b.x_max && b.y_min < b.y_max)) continue;
      out.boxes_2d[c].push_back(b);
      out.origin_2d[c].push_back(gt_index);
    }
    const int n_fp2 = rng.poisson(noise.fp_rate_2d * std::max(1, n_gt) /
                                  double(scene.cameras.size()));
    for (int k = 0; k < n_fp2; ++k) {
      const double w = rng.uniform(30, 180);
      const double h = rng.uniform(24, 140);
      const double cx = rng.uniform(0, cam.width);
      const double cy = rng.uniform(0, cam.height);
      Box2D b;
      b.x_min = std::clamp(cx - 0.5 * w, 0.0, double(cam.width));
      b.x_max = std::clamp(cx + 0.5 * w, 0.0, double(cam.width));
      b.y_min = std::clamp(cy - 0.5 * h, 0.0, double(cam.height));
      b.y_max = std::clamp(cy + 0.5 * h, 0.0, double(cam.height));
      b.score = rng.uniform(0.05, 0.65);
      b.class_id = int(rng.uniform_int(0, kNumObjectClasses - 1));
      if (!(b.x_min < b.x_max && b.y_min < b.y_max)) continue;
      out.boxes_2d[c].push_back(b);
      out.origin_2d[c].push_back(-1);
    }
  }
  return out;
}

int points_in_box(const std::vector<LidarPoint>& points, const Box3D& box,
                  double margin) {
  int n = 0;
  for (const auto& p : points)
    if (box3d_contains(box, p.position, margin)) ++n;
  return n;
}

double quantize9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

namespace {

void append_g9(std::string& s, double v) {
  if (!std::isfinite(v))
    throw std::invalid_argument("dataset: non-finite value");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  s += buf;
}

void append_vec(std::string& s, const double* v, int n) {
  s += '[';
  for (int i = 0; i < n; ++i) {
    if (i) s += ',';
    append_g9(s, v[i]);
  }
  s += ']';
}

void append_mat3(std::string& s, const Mat3& m) {
  s += '[';
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      if (r || c) s += ',';
      append_g9(s, m(r, c));
    }
  s += ']';
}

}  // namespace

std::string serialize_scene(const Scene& scene) {
  std::string s;
  s.reserve(1 << 16);
  s += "{\"id\":\"" + scene.id + "\",\"domain\":{\"name\":\"" +
       domain_name(scene.domain.kind) + "\",\"severity\":";
  append_g9(s, scene.domain.severity);
  s += "},\"gt\":[";
  for (std::size_t i = 0; i < scene.gt_boxes.size(); ++i) {
    const Box3D& b = scene.gt_boxes[i];
    if (i) s += ',';
    s += "{\"c\":";
    append_vec(s, b.center.data(), 3);
    s += ",\"s\":";
    append_vec(s, b.size.data(), 3);
    s += ",\"yaw\":";
    append_g9(s, b.yaw);
    s += ",\"cls\":" + std::to_string(b.class_id) + "}";
  }
  s += "],\"pts\":[";
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const LidarPoint& p = scene.points[i];
    if (i) s += ',';
    const double row[4] = {p.position.x(), p.position.y(), p.position.z(),
                           p.intensity};
    append_vec(s, row, 4);
  }
  s += "],\"cams\":[";
  for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
    const CameraModel& cam = scene.cameras[i];
    if (i) s += ',';
    s += "{\"K\":";
    append_mat3(s, cam.intrinsics);
    s += ",\"R\":";
    append_mat3(s, cam.rotation);
    s += ",\"t\":";
    append_vec(s, cam.translation.data(), 3);
    s += ",\"hw\":[" + std::to_string(cam.height) + "," +
         std::to_string(cam.width) + "]}";
  }
  s += "]}";
  return s;
}

void write_dataset(const std::vector<Scene>& scenes,
                   const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& scene : scenes) {
    const std::string line = serialize_scene(scene);
    out.write(line.data(), std::streamsize(line.size()));
    out.put('\n');
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

using nlohmann::json;

double num_at(const json& j, const char* what, std::size_t idx,
              std::size_t off) {
  if (!j.is_number())
    throw DatasetParseError(std::string("expected number for ") + what +
                                " in scene " + std::to_string(idx),
                            idx, off);
  return j.get<double>();
}

const json& field(const json& j, const char* key, std::size_t idx,
                  std::size_t off) {
  auto it = j.find(key);
  if (it == j.end())
    throw DatasetParseError(std::string("missing key '") + key +
                                "' in scene " + std::to_string(idx),
                            idx, off);
  return *it;
}

}  // namespace

std::vector<Scene> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<Scene> scenes;
  std::string line;
  std::size_t offset = 0;
  std::size_t idx = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetParseError(
          "malformed JSON in scene " + std::to_string(idx) + " near byte " +
              std::to_string(line_start) + ": " + e.what(),
          idx, line_start);
    }
    Scene s;
    try {
      s.id = field(j, "id", idx, line_start).get<std::string>();
      const json& dom = field(j, "domain", idx, line_start);
      s.domain.kind = domain_from_name(
          field(dom, "name", idx, line_start).get<std::string>());
      s.domain.severity =
          num_at(field(dom, "severity", idx, line_start), "severity", idx,
                 line_start);
      for (const json& g : field(j, "gt", idx, line_start)) {
        Box3D b;
        const json& c = field(g, "c", idx, line_start);
        const json& sz = field(g, "s", idx, line_start);
        if (c.size() != 3 || sz.size() != 3)
          throw DatasetParseError("gt box needs 3-vectors in scene " +
                                      std::to_string(idx),
                                  idx, line_start);
        for (int d = 0; d < 3; ++d) {
          b.center(d) = num_at(c[d], "gt.c", idx, line_start);
          b.size(d) = num_at(sz[d], "gt.s", idx, line_start);
        }
        b.yaw = num_at(field(g, "yaw", idx, line_start), "yaw", idx,
                       line_start);
        b.class_id = field(g, "cls", idx, line_start).get<int>();
        b.score = 1.0;
        s.gt_boxes.push_back(b);
      }
      for (const json& p : field(j, "pts", idx, line_start)) {
        if (p.size() != 4)
          throw DatasetParseError(
              "point needs 4 values in scene " + std::to_string(idx), idx,
              line_start);
        LidarPoint lp;
        for (int d = 0; d < 3; ++d)
          lp.position(d) = num_at(p[d], "pts", idx, line_start);
        lp.intensity = num_at(p[3], "pts", idx, line_start);
        s.points.push_back(lp);
      }
      for (const json& c : field(j, "cams", idx, line_start)) {
        CameraModel cam;
        const json& K = field(c, "K", idx, line_start);
        const json& R = field(c, "R", idx, line_start);
        const json& t = field(c, "t", idx, line_start);
        const json& hw = field(c, "hw", idx, line_start);
        if (K.size() != 9 || R.size() != 9 || t.size() != 3 || hw.size() != 2)
          throw DatasetParseError(
              "camera field sizes wrong in scene " + std::to_string(idx), idx,
              line_start);
        for (int r = 0; r < 3; ++r)
          for (int cc = 0; cc < 3; ++cc) {
            cam.intrinsics(r, cc) = num_at(K[r * 3 + cc], "K", idx,
                                           line_start);
            cam.rotation(r, cc) = num_at(R[r * 3 + cc], "R", idx, line_start);
          }
        for (int d = 0; d < 3; ++d)
          cam.translation(d) = num_at(t[d], "t", idx, line_start);
        cam.height = hw[0].get<int>();
        cam.width = hw[1].get<int>();
        cam.validate();
        s.cameras.push_back(cam);
      }
    } catch (const DatasetParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetParseError("invalid scene " + std::to_string(idx) +
                                  " near byte " + std::to_string(line_start) +
                                  ": " + e.what(),
                              idx, line_start);
    }
    scenes.push_back(std::move(s));
    ++idx;
  }
  return scenes;
}

}  // namespace ccf
