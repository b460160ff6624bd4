#include "ccf/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ccf/csv.hpp"
#include "ccf/rng.hpp"
#include "ccf/svg.hpp"
#include "ccf/threading.hpp"

namespace ccf {

namespace {

double bev_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y();
  return std::sqrt(dx * dx + dy * dy);
}

struct RankedDet {
  double score;
  int scene;
  int index;
};

std::vector<RankedDet> rank_detections(const DetectionSet& dets,
                                       int class_id) {
  std::vector<RankedDet> ranked;
  for (std::size_t s = 0; s < dets.size(); ++s)
    for (std::size_t i = 0; i < dets[s].size(); ++i)
      if (dets[s][i].class_id == class_id)
        ranked.push_back({dets[s][i].score, int(s), int(i)});
  std::sort(ranked.begin(), ranked.end(), [](const RankedDet& a,
                                             const RankedDet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scene != b.scene) return a.scene < b.scene;
    return a.index < b.index;
  });
  return ranked;
}

double ap_41point(const std::vector<char>& tp_flags, int n_gt) {
  // tp_flags in score order.
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (char flag : tp_flags) {
    if (flag)
      ++tp;
    else
      ++fp;
    precision.push_back(double(tp) / double(tp + fp));
    recall.push_back(double(tp) / double(n_gt));
  }
  double ap = 0.0;
  for (int r = 0; r <= 40; ++r) {
    const double level = double(r) / 40.0;
    double best = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i)
      if (recall[i] >= level) best = std::max(best, precision[i]);
    ap += best;
  }
  return ap / 41.0;
}

}  // namespace

std::optional<double> average_precision(const DetectionSet& dets,
                                        const GtSet& gts, int class_id,
                                        double dist_threshold) {
  if (dets.size() != gts.size())
    throw std::invalid_argument("average_precision: scene count mismatch");
  int n_gt = 0;
  for (const auto& scene_gts : gts)
    for (const auto& g : scene_gts)
      if (g.class_id == class_id) ++n_gt;
  if (n_gt == 0) return std::nullopt;

  const auto ranked = rank_detections(dets, class_id);
  std::vector<std::vector<char>> taken(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s)
    taken[s].assign(gts[s].size(), 0);

  std::vector<char> tp_flags;
  tp_flags.reserve(ranked.size());
  for (const auto& rd : ranked) {
    const Detection& det = dets[rd.scene][rd.index];
    int best = -1;
    double best_dist = dist_threshold;
    const auto& scene_gts = gts[rd.scene];
    for (std::size_t g = 0; g < scene_gts.size(); ++g) {
      if (taken[rd.scene][g] || scene_gts[g].class_id != class_id) continue;
      const double d = bev_distance(det.box.center, scene_gts[g].center);
      if (d <= best_dist) {
        best_dist = d;
        best = int(g);
      }
    }
    if (best >= 0) {
      taken[rd.scene][best] = 1;
      tp_flags.push_back(1);
    } else {
      tp_flags.push_back(0);
    }
  }
  return ap_41point(tp_flags, n_gt);
}

std::optional<double> average_precision_2d(
    const std::vector<std::vector<Box2D>>& dets,
    const std::vector<std::vector<Box2D>>& gts, int class_id,
    double iou_threshold) {
  if (dets.size() != gts.size())
    throw std::invalid_argument("average_precision_2d: image count mismatch");
  int n_gt = 0;
  for (const auto& image_gts : gts)
    for (const auto& g : image_gts)
      if (g.class_id == class_id) ++n_gt;
  if (n_gt == 0) return std::nullopt;

  struct Ranked {
    double score;
    int image;
    int index;
  };
  std::vector<Ranked> ranked;
  for (std::size_t s = 0; s < dets.size(); ++s)
    for (std::size_t i = 0; i < dets[s].size(); ++i)
      if (dets[s][i].class_id == class_id)
        ranked.push_back({dets[s][i].score, int(s), int(i)});
  std::sort(ranked.begin(), ranked.end(),
            [](const Ranked& a, const Ranked& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.image != b.image) return a.image < b.image;
              return a.index < b.index;
            });

  std::vector<std::vector<char>> taken(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s)
    taken[s].assign(gts[s].size(), 0);
  std::vector<char> tp_flags;
  tp_flags.reserve(ranked.size());
  for (const auto& rd : ranked) {
    const Box2D& det = dets[rd.image][rd.index];
    int best = -1;
    double best_iou = iou_threshold;
    const auto& image_gts = gts[rd.image];
    for (std::size_t g = 0; g < image_gts.size(); ++g) {
      if (taken[rd.image][g] || image_gts[g].class_id != class_id) continue;
      const double iou = iou_2d(det, image_gts[g]);
      if (iou >= best_iou) {
        best_iou = iou;
        best = int(g);
      }
    }
    if (best >= 0) {
      taken[rd.image][best] = 1;
      tp_flags.push_back(1);
    } else {
      tp_flags.push_back(0);
    }
  }
  return ap_41point(tp_flags, n_gt);
}

double map_score(const DetectionSet& dets, const GtSet& gts,
                 const EvalConfig& cfg) {
  double sum = 0.0;
  int n = 0;
  for (int cls = 0; cls < cfg.n_classes; ++cls)
    for (double thr : cfg.thresholds) {
      const auto ap = average_precision(dets, gts, cls, thr);
      if (!ap) continue;
      sum += *ap;
      ++n;
    }
  return n > 0 ? sum / n : 0.0;
}

EvalReport evaluate(const DetectionSet& dets, const GtSet& gts,
                    const EvalConfig& cfg) {
  EvalReport report;
  for (int cls = 0; cls < cfg.n_classes; ++cls) {
    bool present = false;
    for (double thr : cfg.thresholds) {
      const auto ap = average_precision(dets, gts, cls, thr);
      if (ap) {
        report.ap[{cls, thr}] = *ap;
        present = true;
      }
    }
    if (!present) report.absent_classes.push_back(cls);
  }
  report.map = map_score(dets, gts, cfg);

  for (DetectionOrigin origin :
       {DetectionOrigin::From2D, DetectionOrigin::From3D,
        DetectionOrigin::Fused}) {
    DetectionSet filtered(dets.size());
    bool any = false;
    for (std::size_t s = 0; s < dets.size(); ++s)
      for (const auto& d : dets[s])
        if (d.origin == origin) {
          filtered[s].push_back(d);
          any = true;
        }
    if (any) report.per_origin_map[origin] = map_score(filtered, gts, cfg);
  }

  // Translation error over greedy matches at the reference radius.
  std::vector<double> errors;
  for (int cls = 0; cls < cfg.n_classes; ++cls) {
    const auto ranked = rank_detections(dets, cls);
    std::vector<std::vector<char>> taken(gts.size());
    for (std::size_t s = 0; s < gts.size(); ++s)
      taken[s].assign(gts[s].size(), 0);
    for (const auto& rd : ranked) {
      const Detection& det = dets[rd.scene][rd.index];
      int best = -1;
      double best_dist = cfg.ate_threshold;
      for (std::size_t g = 0; g < gts[rd.scene].size(); ++g) {
        if (taken[rd.scene][g] || gts[rd.scene][g].class_id != cls) continue;
        const double d =
            bev_distance(det.box.center, gts[rd.scene][g].center);
        if (d <= best_dist) {
          best_dist = d;
          best = int(g);
        }
      }
      if (best >= 0) {
        taken[rd.scene][best] = 1;
        errors.push_back(best_dist);
      }
    }
  }
  if (!errors.empty()) {
    double s = 0.0;
    for (double e : errors) s += e;
    report.mean_translation_error_m = s / double(errors.size());
  }
  return report;
}

std::optional<double> depth_mae(
    const std::vector<std::pair<double, double>>& pred_gt_pairs, double lo,
    double hi) {
  double sum = 0.0;
  int n = 0;
  for (const auto& [pred, gt] : pred_gt_pairs) {
    if (!(gt > lo && gt < hi)) continue;
    sum += std::abs(pred - gt);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

Detection detection_from_query2d(const Query2D& q) {
  Detection d;
  d.box.center = q.ref_point;
  d.box.size = class_mean_size(q.source_box.class_id);
  d.box.yaw = 0.0;
  d.box.score = q.source_box.score;
  d.box.class_id = q.source_box.class_id;
  d.score = q.source_box.score;
  d.class_id = q.source_box.class_id;
  d.origin = DetectionOrigin::From2D;
  return d;
}

Detection detection_from_query3d(const Query3D& q) {
  Detection d;
  d.box = q.source_box;
  d.score = q.source_box.score;
  d.class_id = q.source_box.class_id;
  d.origin = DetectionOrigin::From3D;
  return d;
}

Eigen::VectorXd pseudo_logits(int class_id, double score, int n_classes) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n_classes + 1);
  z(class_id) = 4.0 * std::clamp(score, 0.0, 1.0) - 2.0;
  return z;
}

namespace {

std::uint64_t seed_from_id(std::uint64_t base, const std::string& id,
                           std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = 1469598103934665603ull;  // FNV offset
  for (char c : id) {
    h ^= std::uint64_t(std::uint8_t(c));
    h *= 1099511628211ull;
  }
  return derive_seed(base, h, a, b);
}

const ConfidenceNet& fallback_net() {
  static const ConfidenceNet net = ConfidenceNet::init(2, 2, 0);
  return net;
}

struct SceneQueryView {
  std::vector<Query2D> queries_2d;
  std::vector<Query3D> queries_3d;
  Proposals proposals;
  std::vector<std::pair<double, double>> image_depth_pairs;
  std::vector<std::pair<double, double>> fused_depth_pairs;
};

SceneQueryView build_scene_queries(const Scene& scene,
                                   const PilotConfig& cfg) {
  SceneQueryView view;
  view.proposals =
      simulate_proposals(scene, cfg.noise, seed_from_id(cfg.seed, scene.id, 1));
  const std::optional<double> lambda_override =
      cfg.confnet ? std::nullopt : std::optional<double>(0.5);
  for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
    const CameraModel& cam = scene.cameras[c];
    for (std::size_t i = 0; i < view.proposals.boxes_2d[c].size(); ++i) {
      const Box2D& box = view.proposals.boxes_2d[c][i];
      const std::uint64_t ds = seed_from_id(cfg.seed, scene.id, 2 + c, i);
      const DepthDistribution image_dist =
          proposal_depth_belief(scene, cam, view.proposals.origin_2d[c][i],
                                cfg.sigma_base, cfg.bins, ds);
      const ConfidenceNet& net = cfg.confnet ? *cfg.confnet : fallback_net();
      view.queries_2d.push_back(make_query2d(box, cam, int(c), scene.points,
                                             cfg.bins, net, image_dist,
                                             lambda_override));
    }
  }
  for (const auto& box : view.proposals.boxes_3d)
    view.queries_3d.push_back(make_query3d(box, cfg.match.scene_radius));

  // Depth error per visible instance, measured on the clean projected box so
  // the number isolates the depth model from proposal jitter.
  for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
    const CameraModel& cam = scene.cameras[c];
    for (std::size_t g = 0; g < scene.gt_boxes.size(); ++g) {
      const auto pb = project_box3d(cam, scene.gt_boxes[g]);
      if (!pb) continue;
      const double gt_depth = camera_depth(cam, scene.gt_boxes[g].center);
      if (gt_depth <= 0) continue;
      const std::uint64_t ds = seed_from_id(cfg.seed, scene.id, 100 + c, g);
      const DepthDistribution image_dist = image_depth_distribution(
          gt_depth, cfg.sigma_base, scene.domain, cfg.bins, ds);
      view.image_depth_pairs.emplace_back(
          expected_depth(image_dist, cfg.bins), gt_depth);
      const ConfidenceNet& net = cfg.confnet ? *cfg.confnet : fallback_net();
      const Query2D q = make_query2d(*pb, cam, int(c), scene.points, cfg.bins,
                                     net, image_dist, lambda_override);
      view.fused_depth_pairs.emplace_back(
          expected_depth(q.depth_dist, cfg.bins), gt_depth);
    }
  }
  return view;
}

}  // namespace

PilotTables pilot_report(
    const std::vector<std::pair<std::string, std::vector<Scene>>>& splits,
    const PilotConfig& cfg) {
  cfg.bins.validate();
  PilotTables tables;
  for (const auto& [split_name, scenes] : splits) {
    PilotSplit row;
    row.split = split_name;
    const auto views = parallel_map<SceneQueryView>(
        scenes.size(),
        [&](std::size_t i) { return build_scene_queries(scenes[i], cfg); });

    // (a) image-plane quality: native 2D proposals vs projected 3D proposals
    std::vector<std::vector<Box2D>> native, projected, gt2d;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const Scene& scene = scenes[s];
      for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
        native.push_back(views[s].proposals.boxes_2d[c]);
        std::vector<Box2D> proj;
        for (const auto& b3 : views[s].proposals.boxes_3d) {
          const auto pb = project_box3d(scene.cameras[c], b3);
          if (pb) proj.push_back(*pb);
        }
        projected.push_back(std::move(proj));
        std::vector<Box2D> gts;
        for (const auto& g : scene.gt_boxes) {
          const auto pb = project_box3d(scene.cameras[c], g);
          if (pb) gts.push_back(*pb);
        }
        gt2d.push_back(std::move(gts));
      }
    }
    auto map50 = [&](const std::vector<std::vector<Box2D>>& dets) {
      double sum = 0.0;
      int n = 0;
      for (int cls = 0; cls < cfg.eval.n_classes; ++cls) {
        const auto ap = average_precision_2d(dets, gt2d, cls, 0.5);
        if (!ap) continue;
        sum += *ap;
        ++n;
      }
      return n > 0 ? sum / n : 0.0;
    };
    row.native_2d_map50 = map50(native);
    row.projected_3d_map50 = map50(projected);

    // (b) per-origin mAP of the initial queries
    DetectionSet dets(scenes.size());
    GtSet gts(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      gts[s] = scenes[s].gt_boxes;
      for (const auto& q : views[s].queries_2d)
        dets[s].push_back(detection_from_query2d(q));
      for (const auto& q : views[s].queries_3d)
        dets[s].push_back(detection_from_query3d(q));
    }
    const EvalReport report = evaluate(dets, gts, cfg.eval);
    if (report.per_origin_map.count(DetectionOrigin::From2D))
      row.map_from_2d = report.per_origin_map.at(DetectionOrigin::From2D);
    if (report.per_origin_map.count(DetectionOrigin::From3D))
      row.map_from_3d = report.per_origin_map.at(DetectionOrigin::From3D);

    // (c) per-pass supervision of the initial queries
    std::vector<SampleMatch> m2d, m3d, mfused;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto& view = views[s];
      std::vector<QueryPrediction> preds2, preds3, fused;
      for (const auto& q : view.queries_2d) {
        QueryPrediction p;
        p.class_logits = pseudo_logits(q.source_box.class_id,
                                       q.source_box.score, cfg.eval.n_classes);
        p.box = detection_from_query2d(q).box;
        preds2.push_back(p);
      }
      for (const auto& q : view.queries_3d) {
        QueryPrediction p;
        p.class_logits = pseudo_logits(q.source_box.class_id,
                                       q.source_box.score, cfg.eval.n_classes);
        p.box = q.source_box;
        preds3.push_back(p);
      }
      fused = preds2;
      fused.insert(fused.end(), preds3.begin(), preds3.end());
      std::vector<QueryOrigin> origins2(preds2.size(), QueryOrigin::From2D);
      std::vector<QueryOrigin> origins3(preds3.size(), QueryOrigin::From3D);
      std::vector<QueryOrigin> originsF = origins2;
      originsF.insert(originsF.end(), origins3.begin(), origins3.end());
      m2d.push_back({assign_queries(preds2, gts[s], cfg.match), origins2});
      m3d.push_back({assign_queries(preds3, gts[s], cfg.match), origins3});
      mfused.push_back({assign_queries(fused, gts[s], cfg.match), originsF});
    }
    row.supervision["2d"] = supervision_stats(m2d);
    row.supervision["3d"] = supervision_stats(m3d);
    row.supervision["fused"] = supervision_stats(mfused);

    // (d) instance depth error
    std::vector<std::pair<double, double>> image_pairs, fused_pairs;
    for (const auto& view : views) {
      image_pairs.insert(image_pairs.end(), view.image_depth_pairs.begin(),
                         view.image_depth_pairs.end());
      fused_pairs.insert(fused_pairs.end(), view.fused_depth_pairs.begin(),
                         view.fused_depth_pairs.end());
    }
    row.image_depth_mae = depth_mae(image_pairs);
    row.fused_depth_mae = depth_mae(fused_pairs);

    tables.splits.push_back(std::move(row));
  }
  return tables;
}

void write_pilot_outputs(const PilotTables& tables,
                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto path = [&out_dir](const char* name) {
    return (fs::path(out_dir) / name).string();
  };

  std::vector<std::vector<std::string>> rows;
  for (const auto& s : tables.splits)
    rows.push_back({s.split, fmt_g9(s.native_2d_map50),
                    fmt_g9(s.projected_3d_map50)});
  write_csv(path("pilot_2d_quality.csv"),
            {"split", "native_2d_map50", "projected_3d_map50"}, rows);

  rows.clear();
  for (const auto& s : tables.splits) {
    rows.push_back({s.split, "from2d", fmt_g9(s.map_from_2d)});
    rows.push_back({s.split, "from3d", fmt_g9(s.map_from_3d)});
  }
  write_csv(path("pilot_origin_map.csv"), {"split", "origin", "map"}, rows);

  rows.clear();
  for (const auto& s : tables.splits)
    for (const char* pass : {"2d", "3d", "fused"}) {
      const SupervisionStats& st = s.supervision.at(pass);
      rows.push_back({s.split, pass, fmt_g9(st.mean_matched_2d),
                      fmt_g9(st.mean_matched_3d), fmt_g9(st.ratio)});
    }
  write_csv(path("pilot_supervision.csv"),
            {"split", "pass", "mean_matched_2d", "mean_matched_3d", "ratio"},
            rows);

  rows.clear();
  for (const auto& s : tables.splits)
    rows.push_back(
        {s.split, s.image_depth_mae ? fmt_g9(*s.image_depth_mae) : "absent"});
  write_csv(path("pilot_depth_mae.csv"), {"split", "depth_mae_m"}, rows);

  rows.clear();
  for (const auto& s : tables.splits)
    rows.push_back(
        {s.split, s.image_depth_mae ? fmt_g9(*s.image_depth_mae) : "absent",
         s.fused_depth_mae ? fmt_g9(*s.fused_depth_mae) : "absent"});
  write_csv(path("depth_fusion.csv"), {"split", "image_mae_m", "fused_mae_m"},
            rows);

  std::vector<std::string> labels;
  BarSeries native{"native 2D", {}}, projected{"projected 3D", {}};
  BarSeries map2{"queries from 2D", {}}, map3{"queries from 3D", {}};
  for (const auto& s : tables.splits) {
    labels.push_back(s.split);
    native.values.push_back(s.native_2d_map50);
    projected.values.push_back(s.projected_3d_map50);
    map2.values.push_back(s.map_from_2d);
    map3.values.push_back(s.map_from_3d);
  }
  write_text_file(path("pilot_2d_quality.svg"),
                  svg_bar_chart("Image-plane proposal quality (mAP@50)",
                                labels, {native, projected}));
  write_text_file(path("pilot_origin_map.svg"),
                  svg_bar_chart("Initial query mAP by origin", labels,
                                {map2, map3}));
}

}  // namespace ccf
