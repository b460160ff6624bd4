#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccf/depthprior.hpp"
#include "ccf/evalkit.hpp"
#include "ccf/masking.hpp"
#include "ccf/matching.hpp"
#include "ccf/scenesim.hpp"

namespace ccf {

// A decode pass restricted to a modality (or neither). Passes share one set
// of weights; restricting the pass restricts which queries see each other.
enum class PassKind { TwoDOnly, ThreeDOnly, Fused };

std::string pass_name(PassKind p);

struct EmptyQueryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// One decoder query: fixed content plus the reference box it refines.
// Raw head outputs decode relative to the reference, so zeroed heads return
// the reference box unchanged.
struct QueryInput {
  Eigen::VectorXd content;  // kContentDim entries
  Vec3 ref_point = Vec3::Zero();
  Vec3 ref_size = Vec3::Ones();
  double ref_yaw = 0.0;
  QueryOrigin origin = QueryOrigin::From3D;
  int source_class = 0;
  double source_score = 0.0;
};

struct QuerySet {
  std::vector<QueryInput> queries;  // image-origin queries first
  int n_2d = 0;
  int n_3d = 0;
};

QuerySet make_query_set(const std::vector<Query2D>& q2,
                        const std::vector<Query3D>& q3);

struct QueryBuildConfig {
  DepthBins bins;
  double sigma_base = 2.2;
  double scene_radius = 40.0;
  const ConfidenceNet* confnet = nullptr;  // nullptr -> fixed 0.5 blend
  // Wins over the net when set; 1 keeps the image belief only, which turns
  // the LiDAR-guided prior off.
  std::optional<double> lambda_override;
};

// Queries for one scene's (possibly masked) inputs. The LiDAR depth prior of
// each image query comes from the surviving points, and every content vector
// is scaled by its proposal's surviving-evidence fraction.
QuerySet build_queries(const Scene& scene, const SceneInputs& inputs,
                       const QueryBuildConfig& cfg, std::uint64_t seed);

// Point-cloud context for cross-attention: per occupied voxel (side
// voxel_size) a 5-dim summary, lifted to content width through a fixed
// seeded projection shared by training and inference. Columns follow voxel
// index order, so the token matrix is deterministic in the input points.
struct SceneTokens {
  Eigen::MatrixXd features;  // kContentDim x M, M may be 0
};

SceneTokens voxel_tokens(const std::vector<LidarPoint>& points,
                         double scene_radius, double voxel_size = 2.0);

struct DecoderConfig {
  int n_classes = kNumObjectClasses;
  int hidden = 32;
};

// Single decoder block at content width: query self-attention, cross
// attention over scene tokens, tanh feed-forward, all with residuals, then
// linear classification and box heads. Heads start at zero.
struct DecoderWeights {
  Eigen::MatrixXd wq, wk, wv, wo;      // self-attention, C x C
  Eigen::MatrixXd wq2, wk2, wv2, wo2;  // cross-attention, C x C
  Eigen::MatrixXd w1;                  // hidden x C
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // C x hidden
  Eigen::VectorXd b2;
  Eigen::MatrixXd wc;  // (n_classes + 1) x C
  Eigen::VectorXd bc;
  Eigen::MatrixXd wb;  // 7 x C
  Eigen::VectorXd bb;

  static DecoderWeights init(const DecoderConfig& cfg, std::uint64_t seed);
  DecoderWeights zeros_like() const;

  // Flat parameter views in a fixed order; weights and their gradients share
  // the ordering, so optimizer steps and finite differences walk them in sync.
  std::vector<Eigen::Map<Eigen::VectorXd>> params();
  std::vector<Eigen::Map<const Eigen::VectorXd>> params() const;

  void accumulate(const DecoderWeights& g, double scale = 1.0);
};

void sgd_step(DecoderWeights& w, const DecoderWeights& g, double lr);

struct DecoderCache {
  Eigen::MatrixXd x0, q, k, v, attn, self_out, x1;
  Eigen::MatrixXd q2, k2, v2, cross_attn, cross_out, x2;
  Eigen::MatrixXd h, x3;
  bool has_tokens = false;
};

struct DecoderOutput {
  Eigen::MatrixXd logits;   // (n_classes + 1) x N
  Eigen::MatrixXd box_raw;  // 7 x N
  std::vector<int> query_index;  // column -> index into QuerySet::queries
};

// Runs one pass over the selected queries. Throws EmptyQueryError when the
// pass selects none. With zero scene tokens the cross-attention stage is an
// identity.
DecoderOutput decoder_forward(const DecoderWeights& w,
                              const SceneTokens& tokens,
                              const QuerySet& queries, PassKind pass,
                              DecoderCache* cache = nullptr);

// Weight gradients for d(loss)/d(logits), d(loss)/d(box_raw). Query content
// and tokens are fixed inputs, so no input gradients are produced.
DecoderWeights decoder_backward(const DecoderWeights& w,
                                const SceneTokens& tokens,
                                const DecoderCache& cache,
                                const Eigen::MatrixXd& dlogits,
                                const Eigen::MatrixXd& dbox_raw);

// raw = (dcenter xyz, log size scale xyz, dyaw) relative to the reference.
Box3D decode_box(const QueryInput& q, const Eigen::VectorXd& raw);

struct LossConfig {
  MatchWeights match;       // assignment costs; scene_radius also normalizes
  double cls_weight = 1.0;  // the box loss terms
  double box_weight = 5.0;
};

struct BranchLoss {
  double total = 0.0;
  double cls = 0.0;
  double box = 0.0;
  int matched = 0;
  MatchResult match;
};

// Focal classification + L1 box loss of one pass's outputs against gt under
// the pass's own assignment, normalized by max(1, matched). Fills gradients
// w.r.t. the pass outputs when the out-pointers are given.
BranchLoss branch_loss(const DecoderOutput& out, const QuerySet& queries,
                       const std::vector<Box3D>& gts, const LossConfig& cfg,
                       Eigen::MatrixXd* dlogits = nullptr,
                       Eigen::MatrixXd* dbox_raw = nullptr);

struct SceneLoss {
  double total = 0.0;
  std::optional<BranchLoss> fused, two_d, three_d;
};

// One training example under shared weights. Decoupled mode runs the fused
// pass plus a per-modality pass each with its own assignment; otherwise only
// the fused pass contributes. Passes without queries are skipped. Gradients
// accumulate into *grads when given.
SceneLoss decoupled_loss(const DecoderWeights& w, const SceneTokens& tokens,
                         const QuerySet& queries,
                         const std::vector<Box3D>& gts, const LossConfig& cfg,
                         bool decoupled, DecoderWeights* grads = nullptr);

// Final-pass detections for one scene: proposals are simulated, queries
// built unmasked, and only the fused pass runs. Scores come from the
// foreground softmax mass; each detection keeps its query's modality origin.
struct PredictStats {
  int fused_passes = 0;
  int unimodal_passes = 0;
};

std::vector<Detection> predict_scene(const DecoderWeights& w,
                                     const Scene& scene,
                                     const ProposalNoise& noise,
                                     const QueryBuildConfig& qcfg,
                                     std::uint64_t seed,
                                     PredictStats* stats = nullptr);

struct TrainConfig {
  int epochs = 30;
  double lr = 0.08;
  // Global gradient-norm ceiling per scene step; 0 disables. Keeps the
  // exponential size head from running away on long schedules.
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  bool decoupled = true;
  MaskPolicy masking;
  ProposalNoise noise;
  LossConfig loss;
  DecoderConfig decoder;
  QueryBuildConfig queries;
  EvalConfig eval;
  int eval_every = 0;  // 0: evaluate only after the final epoch
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0, cls = 0.0, box = 0.0;
  double matched_2d = 0.0, matched_3d = 0.0;  // fused pass, mean per scene
  std::optional<double> eval_map;
};

struct TrainResult {
  DecoderWeights weights;
  std::vector<EpochLog> log;
};

// Per-scene gradient descent in dataset order with the masking curriculum
// advancing one step per scene. Deterministic in (scenes, cfg).
TrainResult train_decoder(const std::vector<Scene>& train,
                          const std::vector<Scene>& eval_scenes,
                          const TrainConfig& cfg);

// mAP of predict_scene outputs over the given scenes.
double evaluate_weights(const DecoderWeights& w,
                        const std::vector<Scene>& scenes,
                        const ProposalNoise& noise,
                        const QueryBuildConfig& qcfg, const EvalConfig& eval,
                        std::uint64_t seed);

void save_decoder_weights(const DecoderWeights& w, const DecoderConfig& cfg,
                          const std::string& path);
DecoderWeights load_decoder_weights(const std::string& path,
                                    DecoderConfig* cfg_out = nullptr);

}  // namespace ccf
