#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"

#include "ccf/decoder.hpp"
#include "ccf/rng.hpp"

using namespace ccf;

namespace {

QueryInput random_query(Rng& rng, QueryOrigin origin) {
  QueryInput q;
  q.content = Eigen::VectorXd::NullaryExpr(
      kContentDim, [&](Eigen::Index) { return rng.normal(0, 0.5); });
  q.ref_point = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20),
                     rng.uniform(0.5, 2.0));
  q.ref_size = Vec3(rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 2));
  q.ref_yaw = rng.uniform(-1.0, 1.0);
  q.origin = origin;
  q.source_class = rng.uniform_int(0, kNumObjectClasses - 1);
  q.source_score = rng.uniform01();
  return q;
}

QuerySet random_query_set(Rng& rng, int n2d, int n3d) {
  QuerySet qs;
  for (int i = 0; i < n2d; ++i)
    qs.queries.push_back(random_query(rng, QueryOrigin::From2D));
  for (int i = 0; i < n3d; ++i)
    qs.queries.push_back(random_query(rng, QueryOrigin::From3D));
  qs.n_2d = n2d;
  qs.n_3d = n3d;
  return qs;
}

std::vector<Box3D> random_gts(Rng& rng, int n) {
  std::vector<Box3D> gts(n);
  for (auto& g : gts) {
    g.center = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20),
                    rng.uniform(0.5, 2.0));
    g.size = Vec3(rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 2));
    g.yaw = rng.uniform(-1.0, 1.0);
    g.class_id = rng.uniform_int(0, kNumObjectClasses - 1);
  }
  return gts;
}

SceneTokens random_tokens(Rng& rng, int m) {
  SceneTokens t;
  t.features = Eigen::MatrixXd::NullaryExpr(
      kContentDim, m, [&](Eigen::Index, Eigen::Index) {
        return rng.normal(0, 0.5);
      });
  return t;
}

// init zeroes the output heads; tests that need gradients through them (or
// off-reference boxes) randomize the heads too.
DecoderWeights random_weights(std::uint64_t seed) {
  DecoderWeights w = DecoderWeights::init(DecoderConfig{}, seed);
  Rng rng(derive_seed(seed, 999));
  for (auto* m : {&w.wc, &w.wb})
    *m = Eigen::MatrixXd::NullaryExpr(m->rows(), m->cols(),
                                      [&](Eigen::Index, Eigen::Index) {
                                        return rng.normal(0, 0.2);
                                      });
  for (auto* v : {&w.bc, &w.bb})
    *v = Eigen::VectorXd::NullaryExpr(
        v->size(), [&](Eigen::Index) { return rng.normal(0, 0.1); });
  return w;
}

bool bitwise_equal(const DecoderWeights& a, const DecoderWeights& b) {
  auto pa = a.params();
  auto pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].size() != pb[i].size()) return false;
    for (Eigen::Index j = 0; j < pa[i].size(); ++j)
      if (pa[i](j) != pb[i](j)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("freshly initialized decoder returns the reference boxes") {
  Rng rng(1);
  const DecoderWeights w = DecoderWeights::init(DecoderConfig{}, 5);
  const QuerySet qs = random_query_set(rng, 2, 3);
  const SceneTokens tokens = random_tokens(rng, 6);

  const DecoderOutput out = decoder_forward(w, tokens, qs, PassKind::Fused);
  REQUIRE(out.logits.cols() == 5);
  CHECK(out.logits.cwiseAbs().maxCoeff() == 0.0);  // uniform class belief
  CHECK(out.box_raw.cwiseAbs().maxCoeff() == 0.0);
  for (int c = 0; c < out.box_raw.cols(); ++c) {
    const QueryInput& q = qs.queries[out.query_index[c]];
    const Box3D b = decode_box(q, out.box_raw.col(c));
    CHECK((b.center - q.ref_point).norm() == 0.0);
    CHECK((b.size - q.ref_size).norm() == 0.0);
    CHECK(b.yaw == wrap_angle(q.ref_yaw));
  }
}

TEST_CASE("decode_box hand values") {
  QueryInput q;
  q.ref_point = Vec3(1, 2, 3);
  q.ref_size = Vec3(2, 1, 1);
  q.ref_yaw = 0.5;
  Eigen::VectorXd raw(7);
  raw << 0.5, -1.0, 0.25, std::log(2.0), 0.0, std::log(0.5), 0.25;
  const Box3D b = decode_box(q, raw);
  CHECK(b.center.x() == doctest::Approx(1.5));
  CHECK(b.center.y() == doctest::Approx(1.0));
  CHECK(b.center.z() == doctest::Approx(3.25));
  CHECK(b.size.x() == doctest::Approx(4.0));
  CHECK(b.size.y() == doctest::Approx(1.0));
  CHECK(b.size.z() == doctest::Approx(0.5));
  CHECK(b.yaw == doctest::Approx(0.75));
}

TEST_CASE("pass selection: 2d-only output ignores 3d queries bitwise") {
  Rng rng(2);
  const DecoderWeights w = random_weights(8);
  const SceneTokens tokens = random_tokens(rng, 5);
  QuerySet both = random_query_set(rng, 3, 4);

  QuerySet only2d = both;
  only2d.queries.resize(3);
  only2d.n_3d = 0;

  const DecoderOutput a = decoder_forward(w, tokens, both, PassKind::TwoDOnly);
  const DecoderOutput b =
      decoder_forward(w, tokens, only2d, PassKind::TwoDOnly);
  REQUIRE(a.logits.cols() == b.logits.cols());
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.box_raw - b.box_raw).cwiseAbs().maxCoeff() == 0.0);

  // Perturbing a 3d query leaves the 2d pass untouched but moves the fused
  // pass: the passes share weights yet see disjoint query slices.
  QuerySet bumped = both;
  bumped.queries[5].content(0) += 0.75;
  const DecoderOutput a2 =
      decoder_forward(w, tokens, bumped, PassKind::TwoDOnly);
  CHECK((a.logits - a2.logits).cwiseAbs().maxCoeff() == 0.0);
  const DecoderOutput f0 = decoder_forward(w, tokens, both, PassKind::Fused);
  const DecoderOutput f1 = decoder_forward(w, tokens, bumped, PassKind::Fused);
  CHECK((f0.logits - f1.logits).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS(
      decoder_forward(w, tokens, only2d, PassKind::ThreeDOnly),
      EmptyQueryError);
}

TEST_CASE("empty token matrix short-circuits cross attention") {
  Rng rng(3);
  const QuerySet qs = random_query_set(rng, 2, 2);
  const DecoderWeights w = random_weights(9);
  DecoderWeights no_cross = w;
  no_cross.wq2.setZero();
  no_cross.wk2.setZero();
  no_cross.wv2.setZero();
  no_cross.wo2.setZero();

  SceneTokens empty;
  empty.features = Eigen::MatrixXd(kContentDim, 0);
  const DecoderOutput a = decoder_forward(w, empty, qs, PassKind::Fused);
  const DecoderOutput b =
      decoder_forward(no_cross, empty, qs, PassKind::Fused);
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.box_raw - b.box_raw).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decoder and loss gradients agree with finite differences") {
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    Rng rng(derive_seed(17, trial));
    DecoderWeights w = random_weights(derive_seed(18, trial));
    const QuerySet qs = random_query_set(rng, 2, 3);
    const std::vector<Box3D> gts = random_gts(rng, 3);
    const SceneTokens tokens =
        trial % 2 ? random_tokens(rng, 4) : SceneTokens{Eigen::MatrixXd(kContentDim, 0)};
    const bool decoupled = trial < 2;
    const LossConfig cfg;

    DecoderWeights grads = w.zeros_like();
    decoupled_loss(w, tokens, qs, gts, cfg, decoupled, &grads);

    auto loss_at = [&]() {
      return decoupled_loss(w, tokens, qs, gts, cfg, decoupled).total;
    };

    auto wp = w.params();
    auto gp = grads.params();
    Rng pick(derive_seed(19, trial));
    const double h = 1e-5;
    for (std::size_t t = 0; t < wp.size(); ++t) {
      for (int rep = 0; rep < 2; ++rep) {
        const Eigen::Index j =
            pick.uniform_int(0, int(wp[t].size()) - 1);
        const double saved = wp[t](j);
        wp[t](j) = saved + h;
        const double up = loss_at();
        wp[t](j) = saved - h;
        const double dn = loss_at();
        wp[t](j) = saved;
        const double fd = (up - dn) / (2 * h);
        const double an = gp[t](j);
        CHECK(std::abs(fd - an) <=
              1e-4 * std::max({1.0, std::abs(fd), std::abs(an)}));
      }
    }
  }
}

TEST_CASE("decoupled gradients are the sum of the three pass gradients") {
  Rng rng(4);
  const DecoderWeights w = random_weights(10);
  const QuerySet qs = random_query_set(rng, 3, 3);
  const std::vector<Box3D> gts = random_gts(rng, 4);
  const SceneTokens tokens = random_tokens(rng, 5);
  const LossConfig cfg;

  DecoderWeights grads = w.zeros_like();
  const SceneLoss loss = decoupled_loss(w, tokens, qs, gts, cfg, true, &grads);
  REQUIRE(loss.two_d.has_value());
  REQUIRE(loss.three_d.has_value());
  REQUIRE(loss.fused.has_value());
  CHECK(loss.total == loss.two_d->total + loss.three_d->total +
                          loss.fused->total);

  // Rebuild by hand, accumulating in the same pass order.
  DecoderWeights manual = w.zeros_like();
  for (PassKind pass :
       {PassKind::TwoDOnly, PassKind::ThreeDOnly, PassKind::Fused}) {
    DecoderCache cache;
    const DecoderOutput out = decoder_forward(w, tokens, qs, pass, &cache);
    Eigen::MatrixXd dlogits, dbox;
    branch_loss(out, qs, gts, cfg, &dlogits, &dbox);
    manual.accumulate(decoder_backward(w, tokens, cache, dlogits, dbox));
  }
  CHECK(bitwise_equal(grads, manual));

  // Non-decoupled mode runs the fused pass alone.
  DecoderWeights fused_only = w.zeros_like();
  const SceneLoss single =
      decoupled_loss(w, tokens, qs, gts, cfg, false, &fused_only);
  CHECK_FALSE(single.two_d.has_value());
  CHECK(single.total == single.fused->total);
}

TEST_CASE("branch loss is zero-gradient-free and normalized") {
  Rng rng(5);
  const DecoderWeights w = random_weights(11);
  const QuerySet qs = random_query_set(rng, 2, 2);
  const std::vector<Box3D> gts = random_gts(rng, 2);
  const SceneTokens tokens = random_tokens(rng, 3);
  const DecoderOutput out = decoder_forward(w, tokens, qs, PassKind::Fused);

  Eigen::MatrixXd dlogits, dbox;
  const LossConfig lcfg;
  const BranchLoss bl = branch_loss(out, qs, gts, lcfg, &dlogits, &dbox);
  CHECK(bl.matched == 2);
  CHECK(bl.total ==
        doctest::Approx(lcfg.cls_weight * bl.cls + lcfg.box_weight * bl.box));
  CHECK(bl.total > 0.0);
  CHECK(dlogits.rows() == out.logits.rows());
  CHECK(dlogits.cols() == out.logits.cols());
  CHECK(dlogits.cwiseAbs().maxCoeff() > 0.0);
  // Unmatched columns still receive background classification gradient.
  CHECK(bl.match.pairs.size() == 2);

  const BranchLoss empty_gt = branch_loss(out, qs, {}, LossConfig{});
  CHECK(empty_gt.matched == 0);
  CHECK(empty_gt.box == 0.0);
  CHECK(empty_gt.cls > 0.0);  // everything should read background
}

TEST_CASE("zero learning rate leaves the weights untouched") {
  SimConfig sim;
  sim.n_objects = {2, 3};
  sim.n_clutter = {30, 40};
  sim.n_cameras = 2;
  sim.image_height = 96;
  sim.image_width = 160;
  std::vector<Scene> scenes{generate_scene(sim, 70), generate_scene(sim, 71)};

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0.0;
  cfg.seed = 40;
  cfg.masking.kind = MaskKind::None;
  const TrainResult res = train_decoder(scenes, {}, cfg);
  // Training derives its init stream from the config seed.
  const DecoderWeights fresh =
      DecoderWeights::init(cfg.decoder, derive_seed(cfg.seed, 1));
  CHECK(bitwise_equal(res.weights, fresh));
  REQUIRE(res.log.size() == 1);
  CHECK_FALSE(res.log[0].eval_map.has_value());  // no eval scenes given
}

TEST_CASE("a few epochs of training reduce the loss") {
  SimConfig sim;
  sim.n_objects = {2, 4};
  sim.n_clutter = {30, 50};
  sim.n_cameras = 2;
  sim.image_height = 96;
  sim.image_width = 160;
  std::vector<Scene> scenes;
  for (int i = 0; i < 4; ++i) scenes.push_back(generate_scene(sim, 80 + i));

  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.lr = 0.05;
  cfg.seed = 41;
  cfg.masking.kind = MaskKind::None;
  const TrainResult res = train_decoder(scenes, scenes, cfg);
  REQUIRE(res.log.size() == 6);
  CHECK(res.log.back().loss < res.log.front().loss);
  CHECK(res.log.back().eval_map.has_value());
  for (const auto& row : res.log) {
    CHECK(row.loss > 0.0);
    CHECK(std::isfinite(row.loss));
  }

  // Same config, same data: training is deterministic.
  const TrainResult res2 = train_decoder(scenes, scenes, cfg);
  CHECK(bitwise_equal(res.weights, res2.weights));
  CHECK(res2.log.back().loss == res.log.back().loss);
}

TEST_CASE("voxel tokens are deterministic and order-insensitive") {
  std::vector<LidarPoint> pts{{Vec3(0.5, 0.5, 0.5), 0.3},
                              {Vec3(0.7, 0.7, 0.7), 0.9},
                              {Vec3(3.1, 0.5, 0.5), 0.5}};
  const SceneTokens a = voxel_tokens(pts, 40.0);
  CHECK(a.features.rows() == kContentDim);
  CHECK(a.features.cols() == 2);  // two occupied 2 m voxels

  std::swap(pts[0], pts[1]);
  const SceneTokens b = voxel_tokens(pts, 40.0);
  CHECK(a.features.isApprox(b.features, 1e-12));

  const SceneTokens none = voxel_tokens({}, 40.0);
  CHECK(none.features.cols() == 0);
}

TEST_CASE("decoder weights save/load round-trip") {
  const DecoderWeights w = random_weights(12);
  DecoderConfig cfg;
  const std::string path = "decoder_roundtrip_test.json";
  save_decoder_weights(w, cfg, path);
  DecoderConfig cfg_back;
  const DecoderWeights back = load_decoder_weights(path, &cfg_back);
  std::remove(path.c_str());
  CHECK(bitwise_equal(w, back));
  CHECK(cfg_back.n_classes == cfg.n_classes);
  CHECK(cfg_back.hidden == cfg.hidden);
  CHECK_THROWS(load_decoder_weights("no_such_weights.json"));
}

TEST_CASE("predict_scene is deterministic and reports pass counts") {
  SimConfig sim;
  sim.n_objects = {2, 3};
  sim.n_clutter = {30, 40};
  sim.n_cameras = 2;
  sim.image_height = 96;
  sim.image_width = 160;
  const Scene scene = generate_scene(sim, 90);
  const DecoderWeights w = random_weights(13);

  PredictStats stats;
  const auto det1 = predict_scene(w, scene, ProposalNoise{}, QueryBuildConfig{},
                                  17, &stats);
  const auto det2 =
      predict_scene(w, scene, ProposalNoise{}, QueryBuildConfig{}, 17);
  CHECK(stats.fused_passes == 1);
  CHECK(stats.unimodal_passes == 0);
  REQUIRE(det1.size() == det2.size());
  for (std::size_t i = 0; i < det1.size(); ++i) {
    CHECK(det1[i].score == det2[i].score);
    CHECK(det1[i].class_id == det2[i].class_id);
    CHECK((det1[i].box.center - det2[i].box.center).norm() == 0.0);
    CHECK(det1[i].class_id >= 0);
    CHECK(det1[i].class_id < kNumObjectClasses);
    CHECK(det1[i].score >= 0.0);
    CHECK(det1[i].score <= 1.0);
  }
}

TEST_CASE("make_query_set puts image queries first with class-prior sizes") {
  const CameraModel cam = make_camera(400.0, 450, 800);
  const DepthBins bins;
  Box2D box;
  box.x_min = 350;
  box.y_min = 200;
  box.x_max = 450;
  box.y_max = 260;
  box.class_id = 2;
  box.score = 0.7;
  const ConfidenceNet net = ConfidenceNet::init(2 * bins.count, 4, 1);
  const DepthDistribution img = discretized_gaussian(15.0, 2.0, bins);
  const Query2D q2 = make_query2d(box, cam, 0, {}, bins, net, img, 1.0);

  Box3D prop;
  prop.center = Vec3(5, 5, 1);
  prop.class_id = 1;
  prop.score = 0.6;
  const Query3D q3 = make_query3d(prop, 40.0);

  const QuerySet qs = make_query_set({q2}, {q3});
  REQUIRE(qs.queries.size() == 2);
  CHECK(qs.n_2d == 1);
  CHECK(qs.n_3d == 1);
  CHECK(qs.queries[0].origin == QueryOrigin::From2D);
  CHECK((qs.queries[0].ref_size - class_mean_size(2)).norm() == 0.0);
  CHECK(qs.queries[0].ref_yaw == 0.0);
  CHECK(qs.queries[0].source_class == 2);
  CHECK(qs.queries[1].origin == QueryOrigin::From3D);
  CHECK((qs.queries[1].ref_point - prop.center).norm() == 0.0);
  CHECK((qs.queries[1].ref_size - prop.size).norm() == 0.0);
  CHECK(qs.queries[1].source_class == 1);
}
