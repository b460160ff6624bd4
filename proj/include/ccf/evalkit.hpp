#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccf/depthprior.hpp"
#include "ccf/geometry.hpp"
#include "ccf/matching.hpp"
#include "ccf/scenesim.hpp"

namespace ccf {

enum class DetectionOrigin { From2D, From3D, Fused };

struct Detection {
  Box3D box;
  double score = 0.0;
  int class_id = 0;
  DetectionOrigin origin = DetectionOrigin::Fused;
};

// Detection/gt lists run parallel per scene: matching never crosses scenes,
// precision/recall pool across them.
using DetectionSet = std::vector<std::vector<Detection>>;
using GtSet = std::vector<std::vector<Box3D>>;

// 41-point interpolated AP with greedy score-ordered matching by BEV center
// distance. Absent when the class has no ground truth.
std::optional<double> average_precision(const DetectionSet& dets,
                                        const GtSet& gts, int class_id,
                                        double dist_threshold);

// Same protocol in the image plane with IoU >= iou_threshold.
std::optional<double> average_precision_2d(
    const std::vector<std::vector<Box2D>>& dets,
    const std::vector<std::vector<Box2D>>& gts, int class_id,
    double iou_threshold);

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};
  int n_classes = kNumObjectClasses;
  double ate_threshold = 2.0;  // matching radius for translation error
};

// Mean AP over classes that have ground truth and all thresholds.
double map_score(const DetectionSet& dets, const GtSet& gts,
                 const EvalConfig& cfg);

struct EvalReport {
  // (class, threshold) -> AP for classes with ground truth
  std::map<std::pair<int, double>, double> ap;
  double map = 0.0;
  std::map<DetectionOrigin, double> per_origin_map;
  std::optional<double> mean_translation_error_m;
  std::vector<int> absent_classes;  // excluded from the mean
};

EvalReport evaluate(const DetectionSet& dets, const GtSet& gts,
                    const EvalConfig& cfg);

// Mean |predicted - gt| depth over pairs whose gt depth lies in (lo, hi);
// absent when no pair qualifies.
std::optional<double> depth_mae(
    const std::vector<std::pair<double, double>>& pred_gt_pairs,
    double lo = 0.0, double hi = 40.0);

// ---- pilot study ----

struct PilotConfig {
  ProposalNoise noise;
  DepthBins bins;
  double sigma_base = 2.2;
  MatchWeights match;
  EvalConfig eval;
  std::uint64_t seed = 0;
  const ConfidenceNet* confnet = nullptr;  // nullptr -> fixed 0.5 blend
};

struct PilotSplit {
  std::string split;
  double native_2d_map50 = 0.0;
  double projected_3d_map50 = 0.0;
  double map_from_2d = 0.0;
  double map_from_3d = 0.0;
  // per pass: {"2d", "3d", "fused"}
  std::map<std::string, SupervisionStats> supervision;
  std::optional<double> image_depth_mae;
  std::optional<double> fused_depth_mae;
};

struct PilotTables {
  std::vector<PilotSplit> splits;
};

// Quantifies the modality imbalance of raw proposals and query matching on
// each split: 2D map quality native vs projected, per-origin 3D mAP of the
// initial queries, per-pass supervision stats, and instance depth error.
PilotTables pilot_report(
    const std::vector<std::pair<std::string, std::vector<Scene>>>& splits,
    const PilotConfig& cfg);

// CSV/SVG emission for the pilot tables (files land under out_dir).
void write_pilot_outputs(const PilotTables& tables, const std::string& out_dir);

// Builds the initial-query detection view used by the pilot: 3D queries keep
// their proposal box, 2D queries materialize at the fused reference point
// with their class's default size.
Detection detection_from_query2d(const Query2D& q);
Detection detection_from_query3d(const Query3D& q);

// Pseudo class logits for an initial proposal: peaked on its class in
// proportion to the detector score.
Eigen::VectorXd pseudo_logits(int class_id, double score, int n_classes);

}  // namespace ccf
