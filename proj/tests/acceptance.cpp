// Freestanding acceptance gate. Each numbered criterion prints one
// [PASS]/[FAIL] line with the measured values; the exit code is the number
// of failures. The pipeline criteria (7-9) train real models, so the full
// gate takes several minutes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ccf/decoder.hpp"
#include "ccf/depthprior.hpp"
#include "ccf/evalkit.hpp"
#include "ccf/experiment.hpp"
#include "ccf/masking.hpp"
#include "ccf/matching.hpp"
#include "ccf/rng.hpp"
#include "ccf/scenesim.hpp"

using namespace ccf;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

std::string fmt(const char* f, ...) {
  char buf[768];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

void report(int index, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] %2d %-28s %s\n", pass ? "PASS" : "FAIL", index, name,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

struct TmpWorkspace {
  fs::path root;
  explicit TmpWorkspace(const std::string& name)
      : root(fs::temp_directory_path() / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TmpWorkspace() { fs::remove_all(root); }
  std::string str(const std::string& sub) const { return (root / sub).string(); }
};

// ---------------------------------------------------------------------------
// 1. Depth-fusion identities: lambda = 1 returns the image distribution,
//    lambda = 0 the LiDAR one, and a shared input is a fixed point, all
//    within 1e-9 over 10^4 random pairs; outputs stay valid distributions.
void criterion_fusion_identities() {
  const auto t0 = std::chrono::steady_clock::now();
  DepthBins bins;
  Rng rng(1001);
  double worst = 0.0;
  double worst_norm = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    DepthDistribution d2(bins.count), d3(bins.count);
    for (int k = 0; k < bins.count; ++k) {
      d2(k) = rng.uniform(1e-4, 1.0);
      d3(k) = rng.uniform(1e-4, 1.0);
    }
    d2 /= d2.sum();
    d3 /= d3.sum();

    const DepthDistribution at1 = fuse_distributions(d2, d3, 1.0);
    const DepthDistribution at0 = fuse_distributions(d2, d3, 0.0);
    const DepthDistribution fix = fuse_distributions(d2, d2, rng.uniform01());
    worst = std::max({worst, (at1 - d2).cwiseAbs().maxCoeff(),
                      (at0 - d3).cwiseAbs().maxCoeff(),
                      (fix - d2).cwiseAbs().maxCoeff()});
    for (const DepthDistribution* d : {&at1, &at0, &fix}) {
      worst_norm = std::max(worst_norm, std::abs(d->sum() - 1.0));
      if (d->minCoeff() < 0.0) worst_norm = 1.0;
    }
  }
  const double dt = seconds_since(t0);
  report(1, "fusion identities", worst < 1e-9 && worst_norm < 1e-12 && dt < 1.0,
         fmt("max identity error %.3g, max |sum-1| %.3g over %d pairs, %.2fs "
             "(need <1e-9, <1s)",
             worst, worst_norm, n, dt));
}

// ---------------------------------------------------------------------------
// 2. Assignment optimality: hungarian() equals an exhaustive permutation
//    oracle on 1000 random matrices up to 7x7.
double oracle_assignment_cost(const CostMatrix& a) {
  const int n = int(a.rows()), m = int(a.cols());
  const int s = std::max(n, m);
  std::vector<int> perm(s);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int r = 0; r < s; ++r)
      total += (r < n && perm[r] < m) ? a(r, perm[r]) : kPadCost;
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best - (s - std::min(n, m)) * kPadCost;
}

void criterion_assignment_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1002);
  int bad = 0;
  double worst = 0.0;
  const int n_trials = 1000;
  for (int t = 0; t < n_trials; ++t) {
    const int n = int(rng.uniform_int(1, 7));
    const int m = int(rng.uniform_int(1, 7));
    CostMatrix a(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) a(i, j) = rng.uniform(-50.0, 50.0);
    const double err =
        std::abs(hungarian(a).total_cost - oracle_assignment_cost(a));
    worst = std::max(worst, err);
    if (err > 1e-6) ++bad;
  }
  const double dt = seconds_since(t0);
  report(2, "assignment vs oracle", bad == 0 && dt < 30.0,
         fmt("%d/%d mismatches, worst |delta| %.3g, %.1fs (need 0, <30s)", bad,
             n_trials, worst, dt));
}

// ---------------------------------------------------------------------------
// 3. Analytic gradients match central finite differences (h = 1e-5) within
//    1e-4 relative error across >= 50 random configurations covering both
//    trainable networks.
void criterion_gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  int configs = 0, probes = 0, bad = 0;
  double worst = 0.0;
  const double h = 1e-5;
  auto rel_err = [](double fd, double an) {
    return std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
  };

  // Confidence net: the checked function is the blend weight itself, which
  // is smooth in every parameter.
  for (int cfg_i = 0; cfg_i < 25; ++cfg_i) {
    ++configs;
    Rng rng(derive_seed(1003, cfg_i));
    const int bins_n = 4 + cfg_i % 5;
    const int hidden = 3 + cfg_i % 4;
    ConfidenceNet net =
        ConfidenceNet::init(2 * bins_n, hidden, derive_seed(7, cfg_i));
    DepthDistribution d2(bins_n), d3(bins_n);
    for (int k = 0; k < bins_n; ++k) {
      d2(k) = rng.uniform(0.02, 1.0);
      d3(k) = rng.uniform(0.02, 1.0);
    }
    d2 /= d2.sum();
    d3 /= d3.sum();
    ConfidenceCache cache;
    confidence_forward(net, d2, d3, &cache);
    const ConfidenceGrads g = confidence_backward(net, cache, 1.0);

    auto probe = [&](double* p, double an) {
      const double saved = *p;
      *p = saved + h;
      const double up = confidence_forward(net, d2, d3);
      *p = saved - h;
      const double dn = confidence_forward(net, d2, d3);
      *p = saved;
      const double e = rel_err((up - dn) / (2 * h), an);
      worst = std::max(worst, e);
      ++probes;
      if (e > 1e-4) ++bad;
    };
    probe(&net.w1(0, 0), g.w1(0, 0));
    probe(&net.w1(hidden - 1, 2 * bins_n - 1),
          g.w1(hidden - 1, 2 * bins_n - 1));
    probe(&net.w2(0, 1), g.w2(0, 1));
    probe(&net.w3(0, hidden - 1), g.w3(0, hidden - 1));
    probe(&net.b1(1), g.b1(1));
    probe(&net.b2(0), g.b2(0));
    probe(&net.b3, g.b3);
  }

  // Decoder: full training loss (both supervision modes, with and without
  // scene tokens), one probed entry per weight tensor.
  for (std::uint64_t cfg_i = 0; cfg_i < 25; ++cfg_i) {
    ++configs;
    Rng rng(derive_seed(1004, cfg_i));
    DecoderWeights w =
        DecoderWeights::init(DecoderConfig{}, derive_seed(8, cfg_i));
    {
      // Heads start at zero; randomize them so box and class terms sit away
      // from their symmetric point.
      Rng head_rng(derive_seed(9, cfg_i));
      for (auto* m : {&w.wc, &w.wb})
        *m = Eigen::MatrixXd::NullaryExpr(
            m->rows(), m->cols(),
            [&](Eigen::Index, Eigen::Index) { return head_rng.normal(0, 0.2); });
      for (auto* v : {&w.bc, &w.bb})
        *v = Eigen::VectorXd::NullaryExpr(
            v->size(), [&](Eigen::Index) { return head_rng.normal(0, 0.1); });
    }

    QuerySet qs;
    const int n2 = 1 + int(cfg_i % 3), n3 = 1 + int((cfg_i / 3) % 3);
    for (int i = 0; i < n2 + n3; ++i) {
      QueryInput q;
      q.content = Eigen::VectorXd::NullaryExpr(
          kContentDim, [&](Eigen::Index) { return rng.normal(0, 0.5); });
      q.ref_point = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20),
                         rng.uniform(0.5, 2.0));
      q.ref_size = Vec3(rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 2));
      q.ref_yaw = rng.uniform(-1.0, 1.0);
      q.origin = i < n2 ? QueryOrigin::From2D : QueryOrigin::From3D;
      q.source_class = int(rng.uniform_int(0, kNumObjectClasses - 1));
      qs.queries.push_back(std::move(q));
    }
    qs.n_2d = n2;
    qs.n_3d = n3;

    std::vector<Box3D> gts(1 + cfg_i % 4);
    for (auto& gt : gts) {
      gt.center = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20),
                       rng.uniform(0.5, 2.0));
      gt.size = Vec3(rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 2));
      gt.yaw = rng.uniform(-1.0, 1.0);
      gt.class_id = int(rng.uniform_int(0, kNumObjectClasses - 1));
    }

    SceneTokens tokens;
    const int m = int(cfg_i % 3) * 3;  // 0, 3 or 6 tokens
    tokens.features = Eigen::MatrixXd::NullaryExpr(
        kContentDim, m,
        [&](Eigen::Index, Eigen::Index) { return rng.normal(0, 0.5); });

    const bool decoupled = cfg_i % 2 == 0;
    const LossConfig lcfg;
    DecoderWeights grads = w.zeros_like();
    decoupled_loss(w, tokens, qs, gts, lcfg, decoupled, &grads);

    auto wp = w.params();
    auto gp = grads.params();
    Rng pick(derive_seed(1005, cfg_i));
    for (std::size_t tns = 0; tns < wp.size(); ++tns) {
      const auto j =
          Eigen::Index(pick.uniform_int(0, std::int64_t(wp[tns].size()) - 1));
      const double saved = wp[tns](j);
      wp[tns](j) = saved + h;
      const double up =
          decoupled_loss(w, tokens, qs, gts, lcfg, decoupled).total;
      wp[tns](j) = saved - h;
      const double dn =
          decoupled_loss(w, tokens, qs, gts, lcfg, decoupled).total;
      wp[tns](j) = saved;
      const double e = rel_err((up - dn) / (2 * h), gp[tns](j));
      worst = std::max(worst, e);
      ++probes;
      if (e > 1e-4) ++bad;
    }
  }

  const double dt = seconds_since(t0);
  report(3, "finite-difference gradients",
         bad == 0 && configs >= 50 && dt < 120.0,
         fmt("%d probes over %d configs, %d over tolerance, worst rel err "
             "%.3g, %.1fs (need 0 bad, >=50 configs, <2min)",
             probes, configs, bad, worst, dt));
}

// ---------------------------------------------------------------------------
// 4. Complementary partition: over 100 seeded (mask, point set) pairs, every
//    projectable point is retained exactly when its pixel is image-masked,
//    and points that never reach the image always survive. Zero violations.
void criterion_complementary_partition() {
  const CameraModel cam = make_camera(180.0, 192, 256);
  GridParams grid;
  int violations = 0;
  long long points_checked = 0, projectable = 0;
  for (int pair_i = 0; pair_i < 100; ++pair_i) {
    Rng rng(derive_seed(1006, pair_i));
    const MaskGrid mask =
        pair_i % 2 ? bernoulli_cell_mask(192, 256, grid, derive_seed(3, pair_i))
                   : gridmask(192, 256, grid, derive_seed(3, pair_i));
    std::vector<Vec3> points;
    for (int k = 0; k < 300; ++k) {
      const double z = rng.uniform(1.0, 45.0);
      points.push_back(
          Vec3(rng.uniform(-0.9, 0.9) * z, rng.uniform(-0.9, 0.9) * z, z));
    }
    const Eigen::MatrixXd pixel_grid = Eigen::MatrixXd::Constant(192, 256, 0.5);
    const ComplementaryResult res =
        apply_complementary(pixel_grid, points, cam, mask);
    std::vector<char> retained(points.size(), 0);
    for (int idx : res.retained_indices) retained[idx] = 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++points_checked;
      const auto px = mask_pixel(cam, points[i]);
      if (!px) {
        if (!retained[i]) ++violations;
        continue;
      }
      ++projectable;
      const bool image_visible = mask(px->first, px->second) != 0;
      if (image_visible == bool(retained[i])) ++violations;
    }
  }
  report(4, "complementary partition", violations == 0 && projectable > 0,
         fmt("%d violations over %lld points (%lld projectable) in 100 "
             "mask/point-set pairs (need 0)",
             violations, points_checked, projectable));
}

// ---------------------------------------------------------------------------
// 5. Curriculum schedule: 0 at step 0 and p_max at the final step, both
//    exact, linear within 1e-12 in between.
void criterion_curriculum() {
  const double p_max = 0.7;
  const std::int64_t total = 12345;
  const bool endpoints = curriculum_prob(0, total, p_max) == 0.0 &&
                         curriculum_prob(total, total, p_max) == p_max;
  double worst = 0.0;
  for (std::int64_t s = 0; s <= total; s += 41)
    worst = std::max(worst, std::abs(curriculum_prob(s, total, p_max) -
                                     p_max * (double(s) / double(total))));
  report(5, "curriculum exactness", endpoints && worst < 1e-12,
         fmt("endpoints %s, max linearity deviation %.3g (need exact, <1e-12)",
             endpoints ? "exact" : "WRONG", worst));
}

// ---------------------------------------------------------------------------
// 6. Pass isolation: the image-only pass is bitwise identical with and
//    without 3D queries present, while the fused pass is provably coupled
//    (perturbing a 3D query moves the 2D-origin outputs).
void criterion_pass_isolation() {
  Rng rng(1007);
  DecoderWeights w = DecoderWeights::init(DecoderConfig{}, 55);
  {
    Rng head_rng(56);
    w.wc = Eigen::MatrixXd::NullaryExpr(
        w.wc.rows(), w.wc.cols(),
        [&](Eigen::Index, Eigen::Index) { return head_rng.normal(0, 0.2); });
    w.wb = Eigen::MatrixXd::NullaryExpr(
        w.wb.rows(), w.wb.cols(),
        [&](Eigen::Index, Eigen::Index) { return head_rng.normal(0, 0.2); });
  }
  SceneTokens tokens;
  tokens.features = Eigen::MatrixXd::NullaryExpr(
      kContentDim, 6,
      [&](Eigen::Index, Eigen::Index) { return rng.normal(0, 0.5); });

  QuerySet both;
  for (int i = 0; i < 7; ++i) {
    QueryInput q;
    q.content = Eigen::VectorXd::NullaryExpr(
        kContentDim, [&](Eigen::Index) { return rng.normal(0, 0.5); });
    q.ref_point = Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), 1.0);
    q.origin = i < 3 ? QueryOrigin::From2D : QueryOrigin::From3D;
    both.queries.push_back(std::move(q));
  }
  both.n_2d = 3;
  both.n_3d = 4;

  QuerySet only2d = both;
  only2d.queries.resize(3);
  only2d.n_3d = 0;

  const DecoderOutput a = decoder_forward(w, tokens, both, PassKind::TwoDOnly);
  const DecoderOutput b = decoder_forward(w, tokens, only2d, PassKind::TwoDOnly);
  const bool isolated = (a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0 &&
                        (a.box_raw - b.box_raw).cwiseAbs().maxCoeff() == 0.0;

  QuerySet bumped = both;
  bumped.queries[4].content(2) += 0.5;
  const DecoderOutput f0 = decoder_forward(w, tokens, both, PassKind::Fused);
  const DecoderOutput f1 = decoder_forward(w, tokens, bumped, PassKind::Fused);
  // The first three fused columns are the 2D queries; the 3D bump must reach
  // them through self-attention for the fused pass to count as coupled.
  const double coupling =
      (f0.logits.leftCols(3) - f1.logits.leftCols(3)).cwiseAbs().maxCoeff();
  const DecoderOutput a2 =
      decoder_forward(w, tokens, bumped, PassKind::TwoDOnly);
  const bool still_isolated =
      (a.logits - a2.logits).cwiseAbs().maxCoeff() == 0.0 &&
      (a.box_raw - a2.box_raw).cwiseAbs().maxCoeff() == 0.0;

  report(6, "pass isolation vs coupling",
         isolated && still_isolated && coupling > 0.0,
         fmt("2d-only bitwise stable: %s, %s; fused 2d-column shift %.3g "
             "(need stable and > 0)",
             isolated ? "yes" : "NO", still_isolated ? "yes" : "NO", coupling));
}

// ---------------------------------------------------------------------------
// Shared pipeline rig for criteria 7-9: one generated dataset, one pilot
// sweep, and a handful of short but real training runs.
ExperimentConfig pipeline_config(const TmpWorkspace& ws) {
  ExperimentConfig cfg = default_config();
  cfg.seed = 20250815;
  cfg.paths.data = ws.str("data");
  cfg.paths.out = ws.str("out");
  cfg.sim.n_objects = {3, 6};
  cfg.sim.n_clutter = {80, 140};
  cfg.sim.rays_per_object = {40, 70};
  cfg.sim.n_cameras = 2;
  cfg.sim.image_height = 192;
  cfg.sim.image_width = 320;
  cfg.splits = {
      {"train", 48, {DomainKind::Source, 0.0}},
      {"val_source", 64, {DomainKind::Source, 0.0}},
      {"val_rain", 64, {DomainKind::Rain, 0.95}},
      {"val_night", 64, {DomainKind::Night, 0.7}},
      {"val_geo", 64, {DomainKind::Geo, 0.7}},
  };
  // Heavy rain must be able to delete LiDAR evidence outright: sparse boxes
  // fall below the simulated detector's point floor, so the image branch has
  // something to rescue on the shifted split.
  cfg.noise.min_points_3d = 30;
  cfg.train.epochs = 16;
  cfg.train.lr = 0.05;
  cfg.train.confnet_epochs = 40;
  cfg.ablation.epochs = 60;
  cfg.ablation.lr = 0.03;
  cfg.ablation.eval_draws = 5;
  return cfg;
}

PilotTables run_pilot(const ExperimentConfig& base) {
  std::vector<std::pair<std::string, std::vector<Scene>>> splits;
  for (const auto& spec : base.splits)
    splits.push_back({spec.name, load_split(base, spec.name)});
  PilotConfig pcfg;
  pcfg.noise = base.noise;
  pcfg.bins = base.bins;
  pcfg.sigma_base = base.sigma_base;
  pcfg.match = base.match;
  pcfg.eval = base.eval;
  pcfg.seed = base.seed;
  return pilot_report(splits, pcfg);
}

// 7. Pilot reproduction: (a) without decoupled supervision the fused pass
//    matches 3D queries > 5x as often as 2D queries; (b) training with
//    decoupled supervision + the depth prior shrinks the per-origin mAP gap
//    by >= 25% relative to a baseline with neither; (c) fused instance depth
//    never degrades the image-only estimate on any split.
void criterion_pilot(const ExperimentConfig& base, const PilotTables& tables) {
  const auto t0 = std::chrono::steady_clock::now();

  double ratio = 0.0;
  for (const auto& s : tables.splits)
    if (s.split == "train") ratio = s.supervision.at("fused").ratio;
  const bool imbalance_ok = ratio > 5.0;

  bool fused_ok = true;
  double worst_gap = -1e9;
  std::string worst_split = "-";
  for (const auto& s : tables.splits) {
    if (!s.image_depth_mae || !s.fused_depth_mae) continue;
    const double gap = *s.fused_depth_mae - *s.image_depth_mae;
    if (gap > worst_gap) {
      worst_gap = gap;
      worst_split = s.split;
    }
    if (gap > 0.0) fused_ok = false;
  }

  const std::vector<Scene> train = load_split(base, "train");
  const std::vector<Scene> val = load_split(base, "val_source");

  auto origin_gap = [&](bool decoupled, bool prior) {
    ExperimentConfig cfg = base;
    cfg.train.decoupled = decoupled;
    cfg.train.depth_prior = prior;
    ConfidenceNet net;
    const ConfidenceNet* net_ptr = nullptr;
    if (prior) {
      net = fit_confidence_stage(cfg, train);
      net_ptr = &net;
    }
    const TrainConfig tcfg = make_train_config(cfg, net_ptr);
    const TrainResult res = train_decoder(train, {}, tcfg);

    // Per-origin mAP sits near single-draw evaluation noise, so the gap is
    // the mean over a few proposal draws, paired between the two arms.
    const int n_draws = 3;
    double sum_2d = 0.0, sum_3d = 0.0;
    for (int k = 0; k < n_draws; ++k) {
      DetectionSet dets(val.size());
      GtSet gts(val.size());
      for (std::size_t i = 0; i < val.size(); ++i) {
        dets[i] =
            predict_scene(res.weights, val[i], cfg.noise, tcfg.queries,
                          derive_seed(derive_seed(cfg.seed, 21, 1), k, i));
        gts[i] = val[i].gt_boxes;
      }
      const EvalReport rep = evaluate(dets, gts, cfg.eval);
      auto origin = [&](DetectionOrigin o) {
        const auto it = rep.per_origin_map.find(o);
        return it == rep.per_origin_map.end() ? 0.0 : it->second;
      };
      sum_2d += origin(DetectionOrigin::From2D);
      sum_3d += origin(DetectionOrigin::From3D);
    }
    return (sum_3d - sum_2d) / n_draws;
  };

  const double gap_base = origin_gap(false, false);
  const double gap_treated = origin_gap(true, true);
  const double shrink =
      gap_base > 1e-9 ? (gap_base - gap_treated) / gap_base : -1.0;
  const bool shrink_ok = shrink >= 0.25;

  const double dt = seconds_since(t0);
  report(7, "pilot reproduction",
         imbalance_ok && shrink_ok && fused_ok && dt < 600.0,
         fmt("fused 3d:2d ratio %.1f (need >5); origin gap %.3f -> %.3f, "
             "shrink %.0f%% (need >=25%%); fused<=image MAE on all splits: %s "
             "(worst %+.3f m on %s); %.0fs (need <10min)",
             ratio, gap_base, gap_treated, 100.0 * shrink,
             fused_ok ? "yes" : "NO", worst_gap, worst_split.c_str(), dt));
}

// 8. Masking ablation on the rain split, run the way the ablate subcommand
//    runs it: fused-only arms (decoupled supervision teaches every origin
//    directly, papering over the fused-match competition masking rebalances)
//    on the slower ablation schedule, each scored as the mean over paired
//    proposal draws. Complementary-grid beats consistent-grid beats no
//    masking, the complementary-vs-none margin is positive, and the
//    random-cell variant lands within 0.03 mAP of the grid.
void criterion_masking_ablation(const ExperimentConfig& base) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Scene> train = load_split(base, "train");
  const std::vector<Scene> rain = load_split(base, "val_rain");
  const ConfidenceNet net = fit_confidence_stage(base, train);
  std::size_t rain_index = 0;
  for (std::size_t s = 0; s < base.splits.size(); ++s)
    if (base.splits[s].name == "val_rain") rain_index = s;

  auto run = [&](MaskKind kind) {
    ExperimentConfig cfg = base;
    cfg.masking.kind = kind;
    cfg.train.decoupled = false;
    cfg.train.epochs = cfg.ablation.epochs;
    cfg.train.lr = cfg.ablation.lr;
    const TrainConfig tcfg = make_train_config(cfg, &net);
    const TrainResult res = train_decoder(train, {}, tcfg);
    double sum = 0.0;
    for (int k = 0; k < cfg.ablation.eval_draws; ++k) {
      const std::uint64_t draw_seed =
          derive_seed(cfg.seed, 25, rain_index, std::uint64_t(k));
      DetectionSet dets(rain.size());
      GtSet gts(rain.size());
      for (std::size_t i = 0; i < rain.size(); ++i) {
        dets[i] = predict_scene(res.weights, rain[i], cfg.noise, tcfg.queries,
                                derive_seed(draw_seed, i));
        gts[i] = rain[i].gt_boxes;
      }
      sum += evaluate(dets, gts, cfg.eval).map;
    }
    return sum / cfg.ablation.eval_draws;
  };

  const double none = run(MaskKind::None);
  const double consistent = run(MaskKind::ConsistentGrid);
  const double comp_grid = run(MaskKind::ComplementaryGrid);
  const double comp_rand = run(MaskKind::ComplementaryRandom);

  const bool ordered = comp_grid >= consistent && consistent >= none;
  const bool margin = comp_grid - none > 0.0;
  const bool rand_close = std::abs(comp_rand - comp_grid) <= 0.03;
  const double dt = seconds_since(t0);
  report(8, "masking ablation (rain)",
         ordered && margin && rand_close && dt < 900.0,
         fmt("mAP none %.3f, consistent %.3f, comp-grid %.3f, comp-rand %.3f; "
             "ordered %s, margin %+.3f (need >0), |rand-grid| %.3f (need "
             "<=0.03); %.0fs (need <15min)",
             none, consistent, comp_grid, comp_rand, ordered ? "yes" : "NO",
             comp_grid - none, std::abs(comp_rand - comp_grid), dt));
}

// 9. Depth realism: image-only instance depth MAE on the source split lands
//    in [1.5, 2.1] m and is strictly larger under rain and night shift.
void criterion_depth_realism(const PilotTables& tables) {
  double src = -1.0, rain = -1.0, night = -1.0;
  for (const auto& s : tables.splits) {
    if (!s.image_depth_mae) continue;
    if (s.split == "val_source") src = *s.image_depth_mae;
    if (s.split == "val_rain") rain = *s.image_depth_mae;
    if (s.split == "val_night") night = *s.image_depth_mae;
  }
  const bool window = src >= 1.5 && src <= 2.1;
  const bool shifts = rain > src && night > src;
  report(9, "image depth realism", window && shifts,
         fmt("source MAE %.3f m (need 1.5..2.1), rain %.3f, night %.3f (need "
             "both > source)",
             src, rain, night));
}

// ---------------------------------------------------------------------------
// 10. CLI determinism: rerunning every subcommand with the same config and
//     seed yields byte-identical CSV outputs, including across CCF_THREADS
//     settings. Each sweep regenerates its own weights, so the comparison
//     also covers training itself.
std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_cli_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  TmpWorkspace ws("ccf_acceptance_cli");
  const std::string cfg_path = ws.str("config.json");
  {
    std::ofstream f(cfg_path);
    f << "{\n"
      << "  \"version\": \"ccf-config-v1\",\n"
      << "  \"seed\": 424242,\n"
      << "  \"paths\": { \"data\": \"" << ws.str("data") << "\", \"out\": \""
      << ws.str("out_a") << "\" },\n"
      << "  \"sim\": { \"n_objects\": [2, 4], \"n_clutter\": [50, 80],\n"
      << "             \"rays_per_object\": [30, 50], \"n_cameras\": 2,\n"
      << "             \"image_height\": 96, \"image_width\": 160 },\n"
      << "  \"splits\": [ { \"name\": \"train\", \"count\": 5 },\n"
      << "                { \"name\": \"val_source\", \"count\": 3 },\n"
      << "                { \"name\": \"val_rain\", \"count\": 3, "
         "\"domain\": \"rain\", \"severity\": 0.7 } ],\n"
      << "  \"train\": { \"epochs\": 2, \"confnet_epochs\": 8 }\n"
      << "}\n";
  }

  std::vector<std::string> errors;
  const std::string quiet = " > /dev/null 2>&1";
  auto shell = [&](const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    if (rc != 0) errors.push_back(fmt("exit %d from: %s", rc, cmd.c_str()));
  };

  shell(std::string(CCF_CLI_PATH) + " gen --config " + cfg_path + quiet);
  // gen reruns byte-identically (--out points gen at a fresh data dir).
  shell(std::string(CCF_CLI_PATH) + " gen --config " + cfg_path + " --out " +
        ws.str("data_b") + quiet);
  int gen_mismatches = 0;
  for (const char* split : {"train", "val_source", "val_rain"}) {
    const std::string name = std::string(split) + ".jsonl";
    if (read_file(ws.str("data") + "/" + name) !=
        read_file(ws.str("data_b") + "/" + name))
      ++gen_mismatches;
  }

  auto sweep = [&](const std::string& out_dir, const std::string& env) {
    for (const char* args : {"pilot", "train", "eval", "mask",
                             "ablate --ablate masking"}) {
      shell(env + std::string(CCF_CLI_PATH) + " " + args + " --config " +
            cfg_path + " --out " + out_dir + quiet);
    }
  };
  sweep(ws.str("out_a"), "");
  sweep(ws.str("out_b"), "CCF_THREADS=1 ");
  sweep(ws.str("out_c"), "CCF_THREADS=3 ");

  int compared = 0, mismatched = 0;
  std::string first_mismatch;
  for (const auto& entry : fs::directory_iterator(ws.str("out_a"))) {
    if (entry.path().extension() != ".csv") continue;
    const std::string name = entry.path().filename().string();
    const std::string a = read_file(ws.str("out_a") + "/" + name);
    for (const char* other : {"out_b", "out_c"}) {
      ++compared;
      if (read_file(ws.str(other) + "/" + name) != a) {
        ++mismatched;
        if (first_mismatch.empty()) first_mismatch = name;
      }
    }
  }

  const bool ok = errors.empty() && gen_mismatches == 0 && compared >= 10 &&
                  mismatched == 0;
  std::string detail = fmt(
      "gen reruns identical: %s; %d CSV comparisons across reruns and "
      "CCF_THREADS {default,1,3}, %d mismatches",
      gen_mismatches == 0 ? "yes" : "NO", compared, mismatched);
  if (!first_mismatch.empty()) detail += " (first: " + first_mismatch + ")";
  if (!errors.empty()) detail += "; " + errors.front();
  detail += fmt("; %.0fs", seconds_since(t0));
  report(10, "CLI byte determinism", ok, detail);
}

}  // namespace

int main() {
  std::printf("acceptance gate for %s\n", CCF_CLI_PATH);

  criterion_fusion_identities();
  criterion_assignment_oracle();
  criterion_gradient_checks();
  criterion_complementary_partition();
  criterion_curriculum();
  criterion_pass_isolation();

  {
    TmpWorkspace ws("ccf_acceptance_pipeline");
    const ExperimentConfig base = pipeline_config(ws);
    cmd_gen(base);
    const PilotTables tables = run_pilot(base);
    criterion_pilot(base, tables);
    criterion_masking_ablation(base);
    criterion_depth_realism(tables);
  }

  criterion_cli_determinism();

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
