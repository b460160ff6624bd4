#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ccf/geometry.hpp"
#include "ccf/scenesim.hpp"

namespace ccf {

// 1 = image-visible, 0 = image-masked.
using MaskGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class MaskKind {
  None,
  Modal,              // drop one whole modality, chosen uniformly
  ConsistentGrid,     // both modalities keep the same visible regions
  ComplementaryGrid,  // points survive only under image-masked cells
  ComplementaryRandom  // complementary with i.i.d. Bernoulli cells
};

std::string mask_kind_name(MaskKind k);
MaskKind mask_kind_from_name(const std::string& name);

struct GridParams {
  int unit_min = 48;
  int unit_max = 96;
  double keep_ratio = 0.5;

  void validate() const;  // throws std::invalid_argument
};

struct MaskPolicy {
  MaskKind kind = MaskKind::ComplementaryGrid;
  GridParams grid;
  double p_max = 0.7;
  bool curriculum = true;
  // Flips the point-survival convention so points survive under visible
  // pixels instead; kept as an ablation hook.
  bool invert_complement = false;

  void validate() const;
};

// Square blocks of side round(d * sqrt(1 - keep_ratio)) tiled with period d
// (the unit size, drawn from [unit_min, unit_max]) at a random offset.
MaskGrid gridmask(int h, int w, const GridParams& params, std::uint64_t seed);

// Same expected masked fraction as gridmask, but each cell masked i.i.d.
MaskGrid bernoulli_cell_mask(int h, int w, const GridParams& params,
                             std::uint64_t seed);

double masked_fraction(const MaskGrid& mask);

// Linear ramp from 0 at step 0 to p_max at step == total_steps.
double curriculum_prob(std::int64_t step, std::int64_t total_steps,
                       double p_max);

// Pixel cell a world point projects into, if any.
std::optional<std::pair<int, int>> mask_pixel(const CameraModel& cam,
                                              const Vec3& p);

struct ComplementaryResult {
  Eigen::MatrixXd masked_grid;           // input with masked pixels zeroed
  std::vector<Vec3> retained_points;     // project into masked cells only
  std::vector<int> retained_indices;
};

// The partition at the heart of complementary masking: every projectable
// point is kept exactly when its pixel is image-masked. Points that do not
// project into the image are kept untouched.
ComplementaryResult apply_complementary(const Eigen::MatrixXd& pixel_grid,
                                        const std::vector<Vec3>& points,
                                        const CameraModel& cam,
                                        const MaskGrid& mask);

// Per-sample representation consumed by query construction. content_scale
// carries the surviving evidence fraction per proposal in [0, 1]; masked-out
// proposals are removed entirely.
struct SceneInputs {
  std::vector<LidarPoint> points;
  std::vector<std::vector<Box2D>> proposals_2d;  // per camera
  std::vector<Box3D> proposals_3d;
  std::vector<std::vector<double>> content_scale_2d;
  std::vector<double> content_scale_3d;
  // Gt index behind each surviving proposal, -1 for false positives.
  std::vector<std::vector<int>> origin_2d;
  std::vector<int> origin_3d;
  std::vector<MaskGrid> masks;  // per camera, all-ones when inactive
};

SceneInputs make_scene_inputs(const Scene& scene, const Proposals& proposals);

// Applies the policy with probability curriculum_prob(step, total) (p_max
// when the curriculum is off). Image-side: proposals in masked regions keep
// only their visible fraction of content. LiDAR side: points are filtered by
// the complementary rule and 3D proposals lose content in proportion to the
// surviving points inside their box (dropped entirely at zero).
SceneInputs apply_policy(const SceneInputs& inputs,
                         const std::vector<CameraModel>& cameras,
                         const MaskPolicy& policy, std::int64_t step,
                         std::int64_t total_steps, std::uint64_t seed);

// Fraction of box pixels left visible by the mask.
double visible_box_fraction(const MaskGrid& mask, const Box2D& box);

}  // namespace ccf
