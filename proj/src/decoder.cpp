#include "ccf/decoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <utility>

#include "json.hpp"

#include "ccf/rng.hpp"
#include "ccf/threading.hpp"

namespace ccf {

namespace {

constexpr std::uint64_t kTokenProjectionSeed = 0x746f6b656e73ull;
constexpr int kTokenRawDim = 5;
constexpr int kVoxelCountCap = 20;

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

// Row-wise softmax of scores.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd a(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    Eigen::ArrayXd e = (s.row(r).array() - s.row(r).maxCoeff()).exp();
    a.row(r) = (e / e.sum()).matrix().transpose();
  }
  return a;
}

// d(loss)/d(scores) for a row-wise softmax given d(loss)/d(probabilities).
Eigen::MatrixXd softmax_rows_backward(const Eigen::MatrixXd& probs,
                                      const Eigen::MatrixXd& dprobs) {
  Eigen::MatrixXd ds(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double dot = probs.row(r).dot(dprobs.row(r));
    ds.row(r) =
        probs.row(r).array() * (dprobs.row(r).array() - dot);
  }
  return ds;
}

const ConfidenceNet& fallback_confnet() {
  static const ConfidenceNet net = ConfidenceNet::init(2, 2, 0);
  return net;
}

const Eigen::MatrixXd& token_projection() {
  static const Eigen::MatrixXd proj = [] {
    Rng rng(kTokenProjectionSeed);
    Eigen::MatrixXd p(kContentDim, kTokenRawDim);
    const double scale = 1.0 / std::sqrt(double(kTokenRawDim));
    for (int c = 0; c < p.cols(); ++c)
      for (int r = 0; r < p.rows(); ++r) p(r, c) = rng.normal(0.0, scale);
    return p;
  }();
  return proj;
}

}  // namespace

std::string pass_name(PassKind p) {
  switch (p) {
    case PassKind::TwoDOnly: return "2d";
    case PassKind::ThreeDOnly: return "3d";
    case PassKind::Fused: return "fused";
  }
  return "fused";
}

QuerySet make_query_set(const std::vector<Query2D>& q2,
                        const std::vector<Query3D>& q3) {
  QuerySet out;
  out.n_2d = int(q2.size());
  out.n_3d = int(q3.size());
  out.queries.reserve(q2.size() + q3.size());
  for (const auto& q : q2) {
    QueryInput in;
    in.content = q.content;
    in.ref_point = q.ref_point;
    in.ref_size = class_mean_size(q.source_box.class_id);
    in.ref_yaw = 0.0;
    in.origin = QueryOrigin::From2D;
    in.source_class = q.source_box.class_id;
    in.source_score = q.source_box.score;
    out.queries.push_back(std::move(in));
  }
  for (const auto& q : q3) {
    QueryInput in;
    in.content = q.content;
    in.ref_point = q.source_box.center;
    in.ref_size = q.source_box.size;
    in.ref_yaw = q.source_box.yaw;
    in.origin = QueryOrigin::From3D;
    in.source_class = q.source_box.class_id;
    in.source_score = q.source_box.score;
    out.queries.push_back(std::move(in));
  }
  return out;
}

QuerySet build_queries(const Scene& scene, const SceneInputs& inputs,
                       const QueryBuildConfig& cfg, std::uint64_t seed) {
  cfg.bins.validate();
  std::vector<Query2D> q2;
  std::vector<Query3D> q3;
  std::vector<double> scale2, scale3;
  const std::optional<double> lambda_override =
      cfg.lambda_override
          ? cfg.lambda_override
          : (cfg.confnet ? std::nullopt : std::optional<double>(0.5));
  const ConfidenceNet& net = cfg.confnet ? *cfg.confnet : fallback_confnet();
  for (std::size_t c = 0; c < inputs.proposals_2d.size(); ++c) {
    const CameraModel& cam = scene.cameras[c];
    for (std::size_t i = 0; i < inputs.proposals_2d[c].size(); ++i) {
      const DepthDistribution belief = proposal_depth_belief(
          scene, cam, inputs.origin_2d[c][i], cfg.sigma_base, cfg.bins,
          derive_seed(seed, 2 + c, i));
      q2.push_back(make_query2d(inputs.proposals_2d[c][i], cam, int(c),
                                inputs.points, cfg.bins, net, belief,
                                lambda_override));
      scale2.push_back(inputs.content_scale_2d[c][i]);
    }
  }
  for (std::size_t i = 0; i < inputs.proposals_3d.size(); ++i) {
    q3.push_back(make_query3d(inputs.proposals_3d[i], cfg.scene_radius));
    scale3.push_back(inputs.content_scale_3d[i]);
  }
  QuerySet qs = make_query_set(q2, q3);
  for (int i = 0; i < qs.n_2d; ++i)
    qs.queries[std::size_t(i)].content *= scale2[std::size_t(i)];
  for (int i = 0; i < qs.n_3d; ++i)
    qs.queries[std::size_t(qs.n_2d + i)].content *= scale3[std::size_t(i)];
  return qs;
}

SceneTokens voxel_tokens(const std::vector<LidarPoint>& points,
                         double scene_radius, double voxel_size) {
  if (!(voxel_size > 0))
    throw std::invalid_argument("voxel_tokens: voxel_size <= 0");
  if (!(scene_radius > 0))
    throw std::invalid_argument("voxel_tokens: scene_radius <= 0");
  struct Accum {
    Vec3 sum = Vec3::Zero();
    double intensity = 0.0;
    int n = 0;
  };
  std::map<std::array<int, 3>, Accum> voxels;
  for (const auto& p : points) {
    const std::array<int, 3> key{int(std::floor(p.position.x() / voxel_size)),
                                 int(std::floor(p.position.y() / voxel_size)),
                                 int(std::floor(p.position.z() / voxel_size))};
    Accum& a = voxels[key];
    a.sum += p.position;
    a.intensity += p.intensity;
    ++a.n;
  }
  Eigen::MatrixXd raw(kTokenRawDim, Eigen::Index(voxels.size()));
  Eigen::Index col = 0;
  for (const auto& [key, a] : voxels) {
    const Vec3 mean = a.sum / double(a.n);
    raw(0, col) = mean.x() / scene_radius;
    raw(1, col) = mean.y() / scene_radius;
    raw(2, col) = mean.z() / scene_radius;
    raw(3, col) = double(std::min(a.n, kVoxelCountCap)) / kVoxelCountCap;
    raw(4, col) = a.intensity / double(a.n);
    ++col;
  }
  SceneTokens out;
  out.features = token_projection() * raw;
  return out;
}

DecoderWeights DecoderWeights::init(const DecoderConfig& cfg,
                                    std::uint64_t seed) {
  if (cfg.n_classes < 1 || cfg.hidden < 1)
    throw std::invalid_argument("decoder config: need classes, hidden >= 1");
  const int c = kContentDim;
  DecoderWeights w;
  Rng rng(seed);
  auto gaussian = [&rng](int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    const double scale = 1.0 / std::sqrt(double(cols));
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) m(i, j) = rng.normal(0.0, scale);
    return m;
  };
  w.wq = gaussian(c, c);
  w.wk = gaussian(c, c);
  w.wv = gaussian(c, c);
  w.wo = gaussian(c, c);
  w.wq2 = gaussian(c, c);
  w.wk2 = gaussian(c, c);
  w.wv2 = gaussian(c, c);
  w.wo2 = gaussian(c, c);
  w.w1 = gaussian(cfg.hidden, c);
  w.b1 = Eigen::VectorXd::Zero(cfg.hidden);
  w.w2 = gaussian(c, cfg.hidden);
  w.b2 = Eigen::VectorXd::Zero(c);
  // Heads start at zero so the initial prediction is the reference box with
  // uniform class belief.
  w.wc = Eigen::MatrixXd::Zero(cfg.n_classes + 1, c);
  w.bc = Eigen::VectorXd::Zero(cfg.n_classes + 1);
  w.wb = Eigen::MatrixXd::Zero(7, c);
  w.bb = Eigen::VectorXd::Zero(7);
  return w;
}

DecoderWeights DecoderWeights::zeros_like() const {
  DecoderWeights z = *this;
  for (auto view : z.params()) view.setZero();
  return z;
}

std::vector<Eigen::Map<Eigen::VectorXd>> DecoderWeights::params() {
  std::vector<Eigen::Map<Eigen::VectorXd>> v;
  for (Eigen::MatrixXd* m :
       {&wq, &wk, &wv, &wo, &wq2, &wk2, &wv2, &wo2, &w1, &w2, &wc, &wb})
    v.emplace_back(m->data(), m->size());
  for (Eigen::VectorXd* b : {&b1, &b2, &bc, &bb})
    v.emplace_back(b->data(), b->size());
  return v;
}

std::vector<Eigen::Map<const Eigen::VectorXd>> DecoderWeights::params() const {
  std::vector<Eigen::Map<const Eigen::VectorXd>> v;
  for (const Eigen::MatrixXd* m :
       {&wq, &wk, &wv, &wo, &wq2, &wk2, &wv2, &wo2, &w1, &w2, &wc, &wb})
    v.emplace_back(m->data(), m->size());
  for (const Eigen::VectorXd* b : {&b1, &b2, &bc, &bb})
    v.emplace_back(b->data(), b->size());
  return v;
}

void DecoderWeights::accumulate(const DecoderWeights& g, double scale) {
  auto mine = params();
  auto theirs = g.params();
  for (std::size_t i = 0; i < mine.size(); ++i)
    mine[i] += scale * theirs[i];
}

void sgd_step(DecoderWeights& w, const DecoderWeights& g, double lr) {
  w.accumulate(g, -lr);
}

namespace {

std::vector<int> pass_columns(const QuerySet& queries, PassKind pass) {
  std::vector<int> cols;
  const int total = queries.n_2d + queries.n_3d;
  for (int i = 0; i < total; ++i) {
    const bool is_2d = i < queries.n_2d;
    if (pass == PassKind::Fused || (pass == PassKind::TwoDOnly && is_2d) ||
        (pass == PassKind::ThreeDOnly && !is_2d))
      cols.push_back(i);
  }
  return cols;
}

}  // namespace

DecoderOutput decoder_forward(const DecoderWeights& w,
                              const SceneTokens& tokens,
                              const QuerySet& queries, PassKind pass,
                              DecoderCache* cache) {
  if (int(queries.queries.size()) != queries.n_2d + queries.n_3d)
    throw std::invalid_argument("decoder_forward: query counts out of sync");
  const std::vector<int> cols = pass_columns(queries, pass);
  if (cols.empty())
    throw EmptyQueryError("decoder_forward: no queries for pass " +
                          pass_name(pass));
  const int c = kContentDim;
  const int n = int(cols.size());
  Eigen::MatrixXd x0(c, n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd& content =
        queries.queries[std::size_t(cols[std::size_t(i)])].content;
    if (content.size() != c)
      throw std::invalid_argument("decoder_forward: bad content width");
    x0.col(i) = content;
  }
  const double scale = 1.0 / std::sqrt(double(c));

  const Eigen::MatrixXd q = w.wq * x0, k = w.wk * x0, v = w.wv * x0;
  const Eigen::MatrixXd attn = softmax_rows(q.transpose() * k * scale);
  const Eigen::MatrixXd self_out = v * attn.transpose();
  const Eigen::MatrixXd x1 = x0 + w.wo * self_out;

  const bool has_tokens = tokens.features.cols() > 0;
  Eigen::MatrixXd q2, k2, v2, cross_attn, cross_out, x2;
  if (has_tokens) {
    if (tokens.features.rows() != c)
      throw std::invalid_argument("decoder_forward: bad token width");
    q2 = w.wq2 * x1;
    k2 = w.wk2 * tokens.features;
    v2 = w.wv2 * tokens.features;
    cross_attn = softmax_rows(q2.transpose() * k2 * scale);
    cross_out = v2 * cross_attn.transpose();
    x2 = x1 + w.wo2 * cross_out;
  } else {
    x2 = x1;
  }

  const Eigen::MatrixXd h =
      ((w.w1 * x2).colwise() + w.b1).array().tanh().matrix();
  const Eigen::MatrixXd x3 = x2 + ((w.w2 * h).colwise() + w.b2);

  DecoderOutput out;
  out.logits = (w.wc * x3).colwise() + w.bc;
  out.box_raw = (w.wb * x3).colwise() + w.bb;
  out.query_index = cols;
  if (cache) {
    cache->x0 = x0;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->attn = attn;
    cache->self_out = self_out;
    cache->x1 = x1;
    cache->q2 = q2;
    cache->k2 = k2;
    cache->v2 = v2;
    cache->cross_attn = cross_attn;
    cache->cross_out = cross_out;
    cache->x2 = x2;
    cache->h = h;
    cache->x3 = x3;
    cache->has_tokens = has_tokens;
  }
  return out;
}

DecoderWeights decoder_backward(const DecoderWeights& w,
                                const SceneTokens& tokens,
                                const DecoderCache& cache,
                                const Eigen::MatrixXd& dlogits,
                                const Eigen::MatrixXd& dbox_raw) {
  DecoderWeights g = w.zeros_like();
  const double scale = 1.0 / std::sqrt(double(kContentDim));

  g.wc = dlogits * cache.x3.transpose();
  g.bc = dlogits.rowwise().sum();
  g.wb = dbox_raw * cache.x3.transpose();
  g.bb = dbox_raw.rowwise().sum();
  const Eigen::MatrixXd dx3 =
      w.wc.transpose() * dlogits + w.wb.transpose() * dbox_raw;

  const Eigen::MatrixXd dh = w.w2.transpose() * dx3;
  const Eigen::MatrixXd dpre =
      dh.array() * (1.0 - cache.h.array().square());
  g.w2 = dx3 * cache.h.transpose();
  g.b2 = dx3.rowwise().sum();
  g.w1 = dpre.matrix() * cache.x2.transpose();
  g.b1 = dpre.rowwise().sum();
  Eigen::MatrixXd dx2 = dx3 + w.w1.transpose() * dpre.matrix();

  Eigen::MatrixXd dx1;
  if (cache.has_tokens) {
    g.wo2 = dx2 * cache.cross_out.transpose();
    const Eigen::MatrixXd dout = w.wo2.transpose() * dx2;
    const Eigen::MatrixXd dv2 = dout * cache.cross_attn;
    const Eigen::MatrixXd dattn = dout.transpose() * cache.v2;
    const Eigen::MatrixXd dscores =
        softmax_rows_backward(cache.cross_attn, dattn);
    const Eigen::MatrixXd dq2 = cache.k2 * dscores.transpose() * scale;
    const Eigen::MatrixXd dk2 = cache.q2 * dscores * scale;
    g.wq2 = dq2 * cache.x1.transpose();
    g.wk2 = dk2 * tokens.features.transpose();
    g.wv2 = dv2 * tokens.features.transpose();
    dx1 = dx2 + w.wq2.transpose() * dq2;
  } else {
    dx1 = dx2;
  }

  g.wo = dx1 * cache.self_out.transpose();
  const Eigen::MatrixXd dout = w.wo.transpose() * dx1;
  const Eigen::MatrixXd dv = dout * cache.attn;
  const Eigen::MatrixXd dattn = dout.transpose() * cache.v;
  const Eigen::MatrixXd dscores = softmax_rows_backward(cache.attn, dattn);
  const Eigen::MatrixXd dq = cache.k * dscores.transpose() * scale;
  const Eigen::MatrixXd dk = cache.q * dscores * scale;
  g.wq = dq * cache.x0.transpose();
  g.wk = dk * cache.x0.transpose();
  g.wv = dv * cache.x0.transpose();
  return g;
}

Box3D decode_box(const QueryInput& q, const Eigen::VectorXd& raw) {
  if (raw.size() != 7) throw std::invalid_argument("decode_box: need 7 values");
  Box3D b;
  b.center = q.ref_point + raw.segment<3>(0);
  b.size = (q.ref_size.array() * raw.segment<3>(3).array().exp()).matrix();
  b.yaw = wrap_angle(q.ref_yaw + raw(6));
  b.score = q.source_score;
  b.class_id = q.source_class;
  return b;
}

BranchLoss branch_loss(const DecoderOutput& out, const QuerySet& queries,
                       const std::vector<Box3D>& gts, const LossConfig& cfg,
                       Eigen::MatrixXd* dlogits, Eigen::MatrixXd* dbox_raw) {
  const int n = int(out.logits.cols());
  const int kp1 = int(out.logits.rows());
  const int background = kp1 - 1;
  const double r = cfg.match.scene_radius;
  constexpr double pi = std::numbers::pi;

  std::vector<Box3D> boxes(static_cast<std::size_t>(n));
  std::vector<QueryPrediction> preds(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const QueryInput& q =
        queries.queries[std::size_t(out.query_index[std::size_t(i)])];
    boxes[std::size_t(i)] = decode_box(q, out.box_raw.col(i));
    preds[std::size_t(i)].class_logits = out.logits.col(i);
    preds[std::size_t(i)].box = boxes[std::size_t(i)];
  }
  BranchLoss loss;
  loss.match = assign_queries(preds, gts, cfg.match);
  loss.matched = int(loss.match.pairs.size());
  const double norm = std::max(1, loss.matched);

  if (dlogits) dlogits->setZero(kp1, n);
  if (dbox_raw) dbox_raw->setZero(7, n);

  std::vector<int> target(std::size_t(n), background);
  for (const auto& pr : loss.match.pairs)
    target[std::size_t(pr.query)] = gts[std::size_t(pr.gt)].class_id;

  const double gamma = cfg.match.focal_gamma;
  for (int i = 0; i < n; ++i) {
    const int t = target[std::size_t(i)];
    const double alpha = t == background ? 1.0 - cfg.match.focal_alpha
                                         : cfg.match.focal_alpha;
    const Eigen::VectorXd p = softmax(out.logits.col(i));
    const double pt = std::max(p(t), 1e-12);
    const double miss = 1.0 - pt;
    loss.cls += alpha * std::pow(miss, gamma) * -std::log(pt);
    if (dlogits) {
      const double dldp = alpha * (gamma * std::pow(miss, gamma - 1.0) *
                                       std::log(pt) -
                                   std::pow(miss, gamma) / pt);
      for (int j = 0; j < kp1; ++j) {
        const double dpt = pt * ((j == t ? 1.0 : 0.0) - p(j));
        (*dlogits)(j, i) += cfg.cls_weight * dldp * dpt / norm;
      }
    }
  }
  loss.cls /= norm;

  for (const auto& pr : loss.match.pairs) {
    const int i = pr.query;
    const Box3D& gt = gts[std::size_t(pr.gt)];
    const Box3D& pb = boxes[std::size_t(i)];
    for (int a = 0; a < 3; ++a) {
      loss.box += std::abs(pb.center(a) - gt.center(a)) / r;
      loss.box += std::abs(pb.size(a) - gt.size(a)) / r;
    }
    const double dyaw = wrap_angle(pb.yaw - gt.yaw);
    loss.box += std::abs(dyaw) / pi;
    if (dbox_raw) {
      for (int a = 0; a < 3; ++a) {
        (*dbox_raw)(a, i) +=
            cfg.box_weight * sgn(pb.center(a) - gt.center(a)) / (r * norm);
        (*dbox_raw)(3 + a, i) += cfg.box_weight *
                                 sgn(pb.size(a) - gt.size(a)) * pb.size(a) /
                                 (r * norm);
      }
      (*dbox_raw)(6, i) += cfg.box_weight * sgn(dyaw) / (pi * norm);
    }
  }
  loss.box /= norm;
  loss.total = cfg.cls_weight * loss.cls + cfg.box_weight * loss.box;
  return loss;
}

SceneLoss decoupled_loss(const DecoderWeights& w, const SceneTokens& tokens,
                         const QuerySet& queries,
                         const std::vector<Box3D>& gts, const LossConfig& cfg,
                         bool decoupled, DecoderWeights* grads) {
  SceneLoss out;
  auto run = [&](PassKind pass) -> std::optional<BranchLoss> {
    const int count = pass == PassKind::TwoDOnly    ? queries.n_2d
                      : pass == PassKind::ThreeDOnly ? queries.n_3d
                                                     : queries.n_2d +
                                                           queries.n_3d;
    if (count == 0) return std::nullopt;
    DecoderCache cache;
    const DecoderOutput fw =
        decoder_forward(w, tokens, queries, pass, grads ? &cache : nullptr);
    Eigen::MatrixXd dlogits, dbox;
    BranchLoss bl = branch_loss(fw, queries, gts, cfg,
                                grads ? &dlogits : nullptr,
                                grads ? &dbox : nullptr);
    if (grads)
      grads->accumulate(decoder_backward(w, tokens, cache, dlogits, dbox));
    out.total += bl.total;
    return bl;
  };
  if (decoupled) {
    out.two_d = run(PassKind::TwoDOnly);
    out.three_d = run(PassKind::ThreeDOnly);
  }
  out.fused = run(PassKind::Fused);
  return out;
}

std::vector<Detection> predict_scene(const DecoderWeights& w,
                                     const Scene& scene,
                                     const ProposalNoise& noise,
                                     const QueryBuildConfig& qcfg,
                                     std::uint64_t seed,
                                     PredictStats* stats) {
  const Proposals props =
      simulate_proposals(scene, noise, derive_seed(seed, 1));
  const SceneInputs inputs = make_scene_inputs(scene, props);
  const QuerySet queries =
      build_queries(scene, inputs, qcfg, derive_seed(seed, 2));
  if (queries.queries.empty()) return {};
  const SceneTokens tokens = voxel_tokens(inputs.points, qcfg.scene_radius);
  const DecoderOutput out =
      decoder_forward(w, tokens, queries, PassKind::Fused);
  if (stats) ++stats->fused_passes;

  const int background = int(out.logits.rows()) - 1;
  std::vector<Detection> dets;
  dets.reserve(std::size_t(out.logits.cols()));
  for (int i = 0; i < int(out.logits.cols()); ++i) {
    const QueryInput& q =
        queries.queries[std::size_t(out.query_index[std::size_t(i)])];
    const Eigen::VectorXd p = softmax(out.logits.col(i));
    int best = 0;
    for (int c = 1; c < background; ++c)
      if (p(c) > p(best)) best = c;
    Detection d;
    d.box = decode_box(q, out.box_raw.col(i));
    d.class_id = best;
    d.score = p(best);
    d.box.class_id = best;
    d.box.score = d.score;
    d.origin = q.origin == QueryOrigin::From2D ? DetectionOrigin::From2D
                                               : DetectionOrigin::From3D;
    dets.push_back(std::move(d));
  }
  return dets;
}

double evaluate_weights(const DecoderWeights& w,
                        const std::vector<Scene>& scenes,
                        const ProposalNoise& noise,
                        const QueryBuildConfig& qcfg, const EvalConfig& eval,
                        std::uint64_t seed) {
  const DetectionSet dets = parallel_map<std::vector<Detection>>(
      scenes.size(), [&](std::size_t i) {
        return predict_scene(w, scenes[i], noise, qcfg,
                             derive_seed(seed, 7, i));
      });
  GtSet gts(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i)
    gts[i] = scenes[i].gt_boxes;
  return map_score(dets, gts, eval);
}

TrainResult train_decoder(const std::vector<Scene>& train,
                          const std::vector<Scene>& eval_scenes,
                          const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train_decoder: epochs < 0");
  if (train.empty())
    throw std::invalid_argument("train_decoder: empty training set");
  cfg.masking.validate();
  TrainResult result;
  result.weights = DecoderWeights::init(cfg.decoder, derive_seed(cfg.seed, 1));
  const std::int64_t total_steps = std::int64_t(cfg.epochs) *
                                   std::int64_t(train.size());
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    double n_fused_scenes = 0;
    for (std::size_t si = 0; si < train.size(); ++si) {
      const Scene& scene = train[si];
      const std::uint64_t scene_seed =
          derive_seed(cfg.seed, 2, std::uint64_t(epoch), si);
      const Proposals props =
          simulate_proposals(scene, cfg.noise, derive_seed(scene_seed, 1));
      const SceneInputs masked = apply_policy(
          make_scene_inputs(scene, props), scene.cameras, cfg.masking, step,
          std::max<std::int64_t>(total_steps, 1), derive_seed(scene_seed, 2));
      ++step;
      const QuerySet queries =
          build_queries(scene, masked, cfg.queries, derive_seed(scene_seed, 3));
      if (queries.queries.empty()) continue;
      const SceneTokens tokens =
          voxel_tokens(masked.points, cfg.queries.scene_radius);
      DecoderWeights grads = result.weights.zeros_like();
      const SceneLoss sl =
          decoupled_loss(result.weights, tokens, queries, scene.gt_boxes,
                         cfg.loss, cfg.decoupled, &grads);
      if (cfg.grad_clip > 0) {
        double sq = 0.0;
        for (const auto& p : std::as_const(grads).params())
          sq += p.squaredNorm();
        if (sq > cfg.grad_clip * cfg.grad_clip)
          for (auto& p : grads.params()) p *= cfg.grad_clip / std::sqrt(sq);
      }
      sgd_step(result.weights, grads, cfg.lr);
      log.loss += sl.total;
      if (sl.fused) {
        log.cls += sl.fused->cls;
        log.box += sl.fused->box;
        for (const auto& pr : sl.fused->match.pairs) {
          const int col = sl.fused->match.pairs.empty() ? 0 : pr.query;
          if (col < queries.n_2d)
            log.matched_2d += 1.0;
          else
            log.matched_3d += 1.0;
        }
        n_fused_scenes += 1.0;
      }
    }
    const double denom = std::max(1.0, double(train.size()));
    log.loss /= denom;
    log.cls /= std::max(1.0, n_fused_scenes);
    log.box /= std::max(1.0, n_fused_scenes);
    log.matched_2d /= std::max(1.0, n_fused_scenes);
    log.matched_3d /= std::max(1.0, n_fused_scenes);
    const bool last = epoch == cfg.epochs - 1;
    if (!eval_scenes.empty() &&
        (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)))
      log.eval_map = evaluate_weights(result.weights, eval_scenes, cfg.noise,
                                      cfg.queries, cfg.eval,
                                      derive_seed(cfg.seed, 3));
    result.log.push_back(std::move(log));
  }
  return result;
}

void save_decoder_weights(const DecoderWeights& w, const DecoderConfig& cfg,
                          const std::string& path) {
  nlohmann::json j;
  j["version"] = "ccf-decoder-v1";
  j["n_classes"] = cfg.n_classes;
  j["hidden"] = cfg.hidden;
  auto put = [&j](const char* key, const Eigen::MatrixXd& m) {
    std::vector<double> v;
    v.reserve(std::size_t(m.size()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    j[key] = v;
  };
  put("wq", w.wq);
  put("wk", w.wk);
  put("wv", w.wv);
  put("wo", w.wo);
  put("wq2", w.wq2);
  put("wk2", w.wk2);
  put("wv2", w.wv2);
  put("wo2", w.wo2);
  put("w1", w.w1);
  put("b1", w.b1);
  put("w2", w.w2);
  put("b2", w.b2);
  put("wc", w.wc);
  put("bc", w.bc);
  put("wb", w.wb);
  put("bb", w.bb);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

DecoderWeights load_decoder_weights(const std::string& path,
                                    DecoderConfig* cfg_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed weights file " + path + ": " +
                             e.what());
  }
  const std::string version = j.value("version", std::string("<missing>"));
  if (version != "ccf-decoder-v1")
    throw std::runtime_error("weights version mismatch in " + path +
                             ": expected ccf-decoder-v1, found " + version);
  DecoderConfig cfg;
  cfg.n_classes = j.at("n_classes").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  DecoderWeights w = DecoderWeights::init(cfg, 0);
  auto get = [&j, &path](const char* key, Eigen::MatrixXd& m) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (int(v.size()) != int(m.size()))
      throw std::runtime_error("weights entry '" + std::string(key) +
                               "' has wrong size in " + path);
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c)
        m(r, c) = v[std::size_t(r) * std::size_t(m.cols()) + std::size_t(c)];
  };
  auto get_vec = [&j, &path](const char* key, Eigen::VectorXd& b) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (int(v.size()) != int(b.size()))
      throw std::runtime_error("weights entry '" + std::string(key) +
                               "' has wrong size in " + path);
    for (int i = 0; i < b.size(); ++i) b(i) = v[std::size_t(i)];
  };
  get("wq", w.wq);
  get("wk", w.wk);
  get("wv", w.wv);
  get("wo", w.wo);
  get("wq2", w.wq2);
  get("wk2", w.wk2);
  get("wv2", w.wv2);
  get("wo2", w.wo2);
  get("w1", w.w1);
  get_vec("b1", w.b1);
  get("w2", w.w2);
  get_vec("b2", w.b2);
  get("wc", w.wc);
  get_vec("bc", w.bc);
  get("wb", w.wb);
  get_vec("bb", w.bb);
  if (cfg_out) *cfg_out = cfg;
  return w;
}

}  // namespace ccf
