#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ccf/geometry.hpp"
#include "ccf/scenesim.hpp"

namespace ccf {

// Probabilities are floored at this before the log-space blend.
inline constexpr double kEpsProb = 1e-6;

// Categorical distribution over depth bins; entries sum to 1.
using DepthDistribution = Eigen::VectorXd;

struct DepthBins {
  double d_min = 1.0;
  double d_max = 51.0;
  int count = 25;

  void validate() const;  // throws std::invalid_argument
  double width() const { return (d_max - d_min) / count; }
  double center(int k) const { return d_min + (k + 0.5) * width(); }
  Eigen::VectorXd centers() const;
  // Bin index for a depth in [d_min, d_max]; -1 outside. The top edge maps
  // into the last bin.
  int bin_of(double depth) const;
};

DepthDistribution uniform_distribution(const DepthBins& bins);

// Normalized histogram of the given depths; uniform when none fall in range.
DepthDistribution lidar_depth_histogram(const std::vector<double>& depths,
                                        const DepthBins& bins);

// Gaussian over bin centers around mean, normalized. sigma -> 0 collapses to
// the mean's bin.
DepthDistribution discretized_gaussian(double mean, double sigma,
                                       const DepthBins& bins);

// Domain-dependent widening of the image depth model.
double image_sigma(double sigma_base, const DomainTag& domain);

// Monocular depth belief for an instance at gt_depth: a discretized Gaussian
// whose center is offset by a seeded bias draw of the same scale, so the
// expected-depth error tracks image_sigma.
DepthDistribution image_depth_distribution(double gt_depth, double sigma_base,
                                           const DomainTag& domain,
                                           const DepthBins& bins,
                                           std::uint64_t seed);

// Image-depth belief of a simulated 2D proposal: grounded at the source
// object's camera depth when it has one (origin_gt >= 0), an ungrounded but
// equally confident belief for false positives.
DepthDistribution proposal_depth_belief(const Scene& scene,
                                        const CameraModel& cam, int origin_gt,
                                        double sigma_base,
                                        const DepthBins& bins,
                                        std::uint64_t seed);

// Log-space blend: softmax(lambda*log d2 + (1-lambda)*log d3) after flooring
// both inputs at kEpsProb and renormalizing.
DepthDistribution fuse_distributions(const DepthDistribution& d2,
                                     const DepthDistribution& d3,
                                     double lambda);

double expected_depth(const DepthDistribution& d, const DepthBins& bins);

// Small MLP scoring agreement of the two distributions: concat(d2, d3) ->
// hidden tanh -> hidden tanh -> sigmoid in (0, 1).
struct ConfidenceNet {
  Eigen::MatrixXd w1, w2, w3;  // w3 is 1 x hidden
  Eigen::VectorXd b1, b2;
  double b3 = 0.0;

  static ConfidenceNet init(int input_dim, int hidden, std::uint64_t seed);
  int input_dim() const { return int(w1.cols()); }
};

struct ConfidenceCache {
  Eigen::VectorXd x, h1, h2;
  double z = 0.0, lambda = 0.5;
};

double confidence_forward(const ConfidenceNet& net,
                          const DepthDistribution& d2,
                          const DepthDistribution& d3,
                          ConfidenceCache* cache = nullptr);

struct ConfidenceGrads {
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2;
  double b3 = 0.0;

  static ConfidenceGrads zeros_like(const ConfidenceNet& net);
  void accumulate(const ConfidenceGrads& other, double scale = 1.0);
};

ConfidenceGrads confidence_backward(const ConfidenceNet& net,
                                    const ConfidenceCache& cache,
                                    double dloss_dlambda);

struct DepthTrainSample {
  DepthDistribution d2, d3;
  double gt_depth = 0.0;
  bool empty_frustum = false;
};

struct ConfidenceTrainConfig {
  int epochs = 60;
  double lr = 0.5;
  bool exclude_empty_frustum = false;
};

struct ConfidenceTrainResult {
  std::vector<double> loss_curve;  // mean L1 of expected fused depth
};

// Full-batch gradient descent on L1 between expected fused depth and gt.
// Throws std::runtime_error when the loss turns non-finite.
ConfidenceTrainResult train_confidence(ConfidenceNet& net,
                                       const std::vector<DepthTrainSample>& samples,
                                       const ConfidenceTrainConfig& cfg,
                                       const DepthBins& bins);

void save_confidence_net(const ConfidenceNet& net, const std::string& path);
ConfidenceNet load_confidence_net(const std::string& path);

inline constexpr int kContentDim = 16;

// Query content layout, both modalities share the 16-dim space:
//   2D: [cx/W, cy/H, w/W, h/H, score, 8 depth moments, flag=0, 1, 0]
//   3D: [center/r (3), size/r (3), sin yaw, cos yaw, score, 0*4, flag=1, 1, 0]
Eigen::VectorXd content_embedding_2d(const Box2D& box, const CameraModel& cam,
                                     const DepthDistribution& depth_dist);
Eigen::VectorXd content_embedding_3d(const Box3D& box, double scene_radius);

struct Query2D {
  Eigen::VectorXd content;
  Vec3 ref_point = Vec3::Zero();
  Box2D source_box;
  int camera_index = 0;
  DepthDistribution depth_dist;
  bool empty_frustum = false;
};

struct Query3D {
  Eigen::VectorXd content;
  Vec3 ref_point = Vec3::Zero();
  Box3D source_box;
};

// Builds a 3D reference point for a 2D proposal: LiDAR frustum histogram,
// image depth belief, learned blend weight, back-projected box center at the
// expected fused depth. lambda_override bypasses the net (1 = image only).
Query2D make_query2d(const Box2D& box, const CameraModel& cam, int camera_index,
                     const std::vector<LidarPoint>& points,
                     const DepthBins& bins, const ConfidenceNet& net,
                     const DepthDistribution& image_dist,
                     std::optional<double> lambda_override = {});

Query3D make_query3d(const Box3D& box, double scene_radius);

}  // namespace ccf
