#include "ccf/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ccf/rng.hpp"

namespace ccf {

std::string mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::None: return "none";
    case MaskKind::Modal: return "modal";
    case MaskKind::ConsistentGrid: return "consistent_grid";
    case MaskKind::ComplementaryGrid: return "complementary_grid";
    case MaskKind::ComplementaryRandom: return "complementary_random";
  }
  return "none";
}

MaskKind mask_kind_from_name(const std::string& name) {
  if (name == "none") return MaskKind::None;
  if (name == "modal") return MaskKind::Modal;
  if (name == "consistent_grid") return MaskKind::ConsistentGrid;
  if (name == "complementary_grid") return MaskKind::ComplementaryGrid;
  if (name == "complementary_random") return MaskKind::ComplementaryRandom;
  throw std::invalid_argument("unknown mask kind: " + name);
}

void GridParams::validate() const {
  if (unit_min < 4)
    throw std::invalid_argument("grid mask: unit size must be >= 4");
  if (unit_max < unit_min)
    throw std::invalid_argument("grid mask: unit range inverted");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
    throw std::invalid_argument("grid mask: keep_ratio outside (0, 1]");
}

void MaskPolicy::validate() const {
  grid.validate();
  if (!(p_max >= 0.0 && p_max <= 1.0))
    throw std::invalid_argument("mask policy: p_max outside [0, 1]");
}

MaskGrid gridmask(int h, int w, const GridParams& params, std::uint64_t seed) {
  params.validate();
  if (h < 1 || w < 1) throw std::invalid_argument("gridmask: empty image");
  Rng rng(seed);
  const int d = int(rng.uniform_int(params.unit_min, params.unit_max));
  const int b = int(std::lround(d * std::sqrt(1.0 - params.keep_ratio)));
  MaskGrid mask = MaskGrid::Constant(h, w, 1);
  if (b <= 0) return mask;
  const int oy = int(rng.uniform_int(0, d - 1));
  const int ox = int(rng.uniform_int(0, d - 1));
  for (int y0 = oy - d; y0 < h; y0 += d) {
    const int r0 = std::max(0, y0), r1 = std::min(h, y0 + b);
    if (r0 >= r1) continue;
    for (int x0 = ox - d; x0 < w; x0 += d) {
      const int c0 = std::max(0, x0), c1 = std::min(w, x0 + b);
      if (c0 >= c1) continue;
      mask.block(r0, c0, r1 - r0, c1 - c0).setZero();
    }
  }
  return mask;
}

MaskGrid bernoulli_cell_mask(int h, int w, const GridParams& params,
                             std::uint64_t seed) {
  params.validate();
  if (h < 1 || w < 1)
    throw std::invalid_argument("bernoulli_cell_mask: empty image");
  Rng rng(seed);
  const int d = int(rng.uniform_int(params.unit_min, params.unit_max));
  const int b = int(std::lround(d * std::sqrt(1.0 - params.keep_ratio)));
  // Masked probability per cell matches the grid variant's realized block
  // fraction, rounding included.
  const double q = double(b) * double(b) / (double(d) * double(d));
  MaskGrid mask = MaskGrid::Constant(h, w, 1);
  const int cells_y = (h + d - 1) / d;
  const int cells_x = (w + d - 1) / d;
  for (int cy = 0; cy < cells_y; ++cy)
    for (int cx = 0; cx < cells_x; ++cx) {
      if (!rng.bernoulli(q)) continue;
      const int r0 = cy * d, c0 = cx * d;
      mask.block(r0, c0, std::min(d, h - r0), std::min(d, w - c0)).setZero();
    }
  return mask;
}

double masked_fraction(const MaskGrid& mask) {
  if (mask.size() == 0) return 0.0;
  std::int64_t zeros = 0;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c) == 0) ++zeros;
  return double(zeros) / double(mask.size());
}

double curriculum_prob(std::int64_t step, std::int64_t total_steps,
                       double p_max) {
  if (total_steps < 1)
    throw std::invalid_argument("curriculum_prob: total_steps < 1");
  if (!(p_max >= 0.0 && p_max <= 1.0))
    throw std::invalid_argument("curriculum_prob: p_max outside [0, 1]");
  if (step <= 0) return 0.0;
  if (step >= total_steps) return p_max;
  return p_max * double(step) / double(total_steps);
}

std::optional<std::pair<int, int>> mask_pixel(const CameraModel& cam,
                                              const Vec3& p) {
  const auto pd = project_point(cam, p);
  if (!pd) return std::nullopt;
  return std::make_pair(int(std::floor(pd->pixel.y())),
                        int(std::floor(pd->pixel.x())));
}

ComplementaryResult apply_complementary(const Eigen::MatrixXd& pixel_grid,
                                        const std::vector<Vec3>& points,
                                        const CameraModel& cam,
                                        const MaskGrid& mask) {
  if (mask.rows() != cam.height || mask.cols() != cam.width)
    throw std::invalid_argument("apply_complementary: mask/camera size mismatch");
  if (pixel_grid.rows() != mask.rows() || pixel_grid.cols() != mask.cols())
    throw std::invalid_argument("apply_complementary: grid/mask size mismatch");
  ComplementaryResult out;
  out.masked_grid = pixel_grid;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c) == 0) out.masked_grid(r, c) = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto px = mask_pixel(cam, points[i]);
    if (!px || mask(px->first, px->second) == 0) {
      out.retained_points.push_back(points[i]);
      out.retained_indices.push_back(int(i));
    }
  }
  return out;
}

double visible_box_fraction(const MaskGrid& mask, const Box2D& box) {
  const int c0 = std::max(0, int(std::floor(box.x_min)));
  const int c1 = std::min(int(mask.cols()), int(std::ceil(box.x_max)));
  const int r0 = std::max(0, int(std::floor(box.y_min)));
  const int r1 = std::min(int(mask.rows()), int(std::ceil(box.y_max)));
  if (c0 >= c1 || r0 >= r1) return 0.0;
  std::int64_t visible = 0, total = 0;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      ++total;
      if (mask(r, c) != 0) ++visible;
    }
  return double(visible) / double(total);
}

SceneInputs make_scene_inputs(const Scene& scene, const Proposals& proposals) {
  SceneInputs in;
  in.points = scene.points;
  in.proposals_2d = proposals.boxes_2d;
  in.proposals_3d = proposals.boxes_3d;
  in.content_scale_2d.resize(in.proposals_2d.size());
  for (std::size_t c = 0; c < in.proposals_2d.size(); ++c)
    in.content_scale_2d[c].assign(in.proposals_2d[c].size(), 1.0);
  in.content_scale_3d.assign(in.proposals_3d.size(), 1.0);
  in.origin_2d = proposals.origin_2d;
  in.origin_3d = proposals.origin_3d;
  in.masks.reserve(scene.cameras.size());
  for (const auto& cam : scene.cameras)
    in.masks.push_back(MaskGrid::Constant(cam.height, cam.width, 1));
  return in;
}

namespace {

// Proposals stand in for a detector run on the masked inputs: one that has
// lost most of the evidence behind a proposal would not fire at all, so the
// proposal is dropped once the surviving fraction falls below this share.
// Stray returns (clutter inside the box, points outside every frustum) must
// not keep a gutted proposal alive. Above the threshold the content shrinks
// with the surviving fraction instead.
constexpr double kMinSurvivingFraction = 0.25;

void scale_2d_by_visibility(SceneInputs& io) {
  for (std::size_t c = 0; c < io.proposals_2d.size(); ++c) {
    std::vector<Box2D> kept;
    std::vector<double> kept_scale;
    std::vector<int> kept_origin;
    for (std::size_t i = 0; i < io.proposals_2d[c].size(); ++i) {
      const double vis =
          visible_box_fraction(io.masks[c], io.proposals_2d[c][i]);
      if (vis < kMinSurvivingFraction) continue;
      kept.push_back(io.proposals_2d[c][i]);
      kept_scale.push_back(io.content_scale_2d[c][i] * vis);
      kept_origin.push_back(io.origin_2d[c][i]);
    }
    io.proposals_2d[c] = std::move(kept);
    io.content_scale_2d[c] = std::move(kept_scale);
    io.origin_2d[c] = std::move(kept_origin);
  }
}

void filter_points_and_rescale_3d(SceneInputs& io,
                                  const std::vector<CameraModel>& cameras,
                                  bool keep_under_visible) {
  // keep_under_visible: true keeps points whose every observing camera shows
  // the pixel (consistent masking); false keeps points only under masked
  // pixels (complementary).
  std::vector<int> pre_counts(io.proposals_3d.size());
  for (std::size_t i = 0; i < io.proposals_3d.size(); ++i)
    pre_counts[i] = points_in_box(io.points, io.proposals_3d[i]);

  std::vector<LidarPoint> kept;
  kept.reserve(io.points.size());
  for (const auto& p : io.points) {
    bool drop = false;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      const auto px = mask_pixel(cameras[c], p.position);
      if (!px) continue;
      const bool visible = io.masks[c](px->first, px->second) != 0;
      if (visible != keep_under_visible) {
        drop = true;
        break;
      }
    }
    if (!drop) kept.push_back(p);
  }
  io.points = std::move(kept);

  std::vector<Box3D> boxes;
  std::vector<double> scales;
  std::vector<int> origins;
  for (std::size_t i = 0; i < io.proposals_3d.size(); ++i) {
    if (pre_counts[i] == 0) {
      boxes.push_back(io.proposals_3d[i]);
      scales.push_back(io.content_scale_3d[i]);
      origins.push_back(io.origin_3d[i]);
      continue;
    }
    const int post = points_in_box(io.points, io.proposals_3d[i]);
    const double frac = double(post) / double(pre_counts[i]);
    if (frac < kMinSurvivingFraction) continue;
    boxes.push_back(io.proposals_3d[i]);
    scales.push_back(io.content_scale_3d[i] * frac);
    origins.push_back(io.origin_3d[i]);
  }
  io.proposals_3d = std::move(boxes);
  io.content_scale_3d = std::move(scales);
  io.origin_3d = std::move(origins);
}

}  // namespace

SceneInputs apply_policy(const SceneInputs& inputs,
                         const std::vector<CameraModel>& cameras,
                         const MaskPolicy& policy, std::int64_t step,
                         std::int64_t total_steps, std::uint64_t seed) {
  policy.validate();
  if (cameras.size() != inputs.masks.size())
    throw std::invalid_argument("apply_policy: camera count mismatch");
  SceneInputs out = inputs;
  if (policy.kind == MaskKind::None) return out;

  const double p = policy.curriculum
                       ? curriculum_prob(step, total_steps, policy.p_max)
                       : policy.p_max;
  Rng rng(seed);
  if (rng.uniform01() >= p) return out;

  if (policy.kind == MaskKind::Modal) {
    if (rng.bernoulli(0.5)) {
      // Image modality dropped.
      for (auto& cam_props : out.proposals_2d) cam_props.clear();
      for (auto& cam_scales : out.content_scale_2d) cam_scales.clear();
      for (auto& cam_origins : out.origin_2d) cam_origins.clear();
      for (auto& m : out.masks) m.setZero();
    } else {
      out.points.clear();
      out.proposals_3d.clear();
      out.content_scale_3d.clear();
      out.origin_3d.clear();
    }
    return out;
  }

  for (std::size_t c = 0; c < cameras.size(); ++c) {
    const std::uint64_t mask_seed = rng.next_u64();
    out.masks[c] = policy.kind == MaskKind::ComplementaryRandom
                       ? bernoulli_cell_mask(cameras[c].height,
                                             cameras[c].width, policy.grid,
                                             mask_seed)
                       : gridmask(cameras[c].height, cameras[c].width,
                                  policy.grid, mask_seed);
  }
  scale_2d_by_visibility(out);
  const bool keep_under_visible =
      policy.kind == MaskKind::ConsistentGrid ? !policy.invert_complement
                                              : policy.invert_complement;
  filter_points_and_rescale_3d(out, cameras, keep_under_visible);
  return out;
}

}  // namespace ccf
