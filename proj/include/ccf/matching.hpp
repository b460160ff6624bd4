#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ccf/geometry.hpp"

namespace ccf {

// Rows are queries, columns are ground-truth boxes.
using CostMatrix = Eigen::MatrixXd;

// Unfilled cells of rectangular problems behave as if padded with this cost,
// so real pairs always win. Callers must keep |cost| <= kMaxMatchCost.
inline constexpr double kPadCost = 1e6;
inline constexpr double kMaxMatchCost = 1e5;

struct MatchPair {
  int query = -1;
  int gt = -1;
  double cost = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;        // sorted by query index
  std::vector<int> unmatched_queries;  // ascending
  double total_cost = 0.0;
};

// Minimum-cost assignment of min(rows, cols) pairs. Ties between equal-cost
// assignments resolve to the lexicographically smallest pair list. Throws
// std::invalid_argument on NaN/infinite or out-of-range costs.
MatchResult hungarian(const CostMatrix& costs);

struct MatchWeights {
  double cls = 1.0;
  double box = 0.25;  // applied per box parameter dimension
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double scene_radius = 40.0;  // normalizes center and size differences
};

// (center/radius, size/radius, wrapped yaw / pi)
Eigen::Matrix<double, 7, 1> normalized_box_params(const Box3D& box,
                                                  double radius);

// Sum of absolute differences of normalized box parameters. The yaw term
// wraps the difference before normalizing.
double box_l1(const Box3D& a, const Box3D& b, double radius);

// Focal-style classification cost of predicting gt's class from logits.
// Softmax runs over all (K+1) entries including the background slot.
double focal_cost(const Eigen::VectorXd& logits, int target_class,
                  const MatchWeights& w);

double match_cost(const Eigen::VectorXd& logits, const Box3D& pred_box,
                  const Box3D& gt, const MatchWeights& w);

struct QueryPrediction {
  Eigen::VectorXd class_logits;  // K+1 entries, background last
  Box3D box;
};

MatchResult assign_queries(const std::vector<QueryPrediction>& preds,
                           const std::vector<Box3D>& gts,
                           const MatchWeights& w);

enum class QueryOrigin { From2D, From3D };

struct SampleMatch {
  MatchResult match;
  std::vector<QueryOrigin> origins;  // one per query row
};

struct SupervisionStats {
  double mean_matched_2d = 0.0;
  double mean_matched_3d = 0.0;
  double ratio = 0.0;  // 3D:2D; +inf when no 2D query ever matches
};

SupervisionStats supervision_stats(const std::vector<SampleMatch>& samples);

}  // namespace ccf
