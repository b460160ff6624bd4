#include "ccf/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "ccf/csv.hpp"
#include "ccf/rng.hpp"
#include "ccf/svg.hpp"
#include "ccf/threading.hpp"

namespace fs = std::filesystem;

namespace ccf {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& msg) {
  throw std::runtime_error("config: " + msg);
}

void check_keys(const json& j, const std::string& context,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error("'" + context + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) config_error("unknown key '" + context + "." + it.key() + "'");
  }
}

template <typename T>
void read_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_range(const json& j, const char* key, IntRange& out) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<int>>();
  if (v.size() != 2)
    config_error("'" + std::string(key) + "' must be a [lo, hi] pair");
  out = {v[0], v[1]};
}

void parse_sim(const json& j, SimConfig& sim) {
  check_keys(j, "sim",
             {"n_objects", "class_weights", "rays_per_object",
              "point_noise_sigma", "n_clutter", "n_cameras", "image_height",
              "image_width", "hfov_deg", "camera_height", "scene_radius",
              "min_object_range"});
  read_range(j, "n_objects", sim.n_objects);
  read_to(j, "class_weights", sim.class_weights);
  read_range(j, "rays_per_object", sim.rays_per_object);
  read_to(j, "point_noise_sigma", sim.point_noise_sigma);
  read_range(j, "n_clutter", sim.n_clutter);
  read_to(j, "n_cameras", sim.n_cameras);
  read_to(j, "image_height", sim.image_height);
  read_to(j, "image_width", sim.image_width);
  read_to(j, "hfov_deg", sim.hfov_deg);
  read_to(j, "camera_height", sim.camera_height);
  read_to(j, "scene_radius", sim.scene_radius);
  read_to(j, "min_object_range", sim.min_object_range);
}

void parse_splits(const json& j, std::vector<SplitSpec>& splits) {
  if (!j.is_array()) config_error("'splits' must be an array");
  splits.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& s = j[i];
    check_keys(s, "splits[" + std::to_string(i) + "]",
               {"name", "count", "domain", "severity"});
    SplitSpec spec;
    if (!s.contains("name") || !s.contains("count"))
      config_error("each split needs 'name' and 'count'");
    spec.name = s.at("name").get<std::string>();
    spec.count = s.at("count").get<int>();
    if (spec.count < 0) config_error("split count < 0");
    std::string domain = "source";
    read_to(s, "domain", domain);
    spec.domain.kind = domain_from_name(domain);
    read_to(s, "severity", spec.domain.severity);
    splits.push_back(std::move(spec));
  }
}

void parse_noise(const json& j, ProposalNoise& n) {
  check_keys(j, "noise",
             {"center_sigma", "size_sigma", "yaw_sigma", "box2d_sigma_px",
              "score_sigma", "fp_rate_2d", "fp_rate_3d", "recall_2d",
              "recall_3d", "rain_center_inflation", "night_box2d_inflation",
              "min_points_3d"});
  read_to(j, "center_sigma", n.center_sigma);
  read_to(j, "size_sigma", n.size_sigma);
  read_to(j, "yaw_sigma", n.yaw_sigma);
  read_to(j, "box2d_sigma_px", n.box2d_sigma_px);
  read_to(j, "score_sigma", n.score_sigma);
  read_to(j, "fp_rate_2d", n.fp_rate_2d);
  read_to(j, "fp_rate_3d", n.fp_rate_3d);
  read_to(j, "recall_2d", n.recall_2d);
  read_to(j, "recall_3d", n.recall_3d);
  read_to(j, "rain_center_inflation", n.rain_center_inflation);
  read_to(j, "night_box2d_inflation", n.night_box2d_inflation);
  read_to(j, "min_points_3d", n.min_points_3d);
}

void parse_depth(const json& j, DepthBins& bins, double& sigma_base) {
  check_keys(j, "depth", {"d_min", "d_max", "bins", "sigma_base"});
  read_to(j, "d_min", bins.d_min);
  read_to(j, "d_max", bins.d_max);
  read_to(j, "bins", bins.count);
  read_to(j, "sigma_base", sigma_base);
}

void parse_masking(const json& j, MaskPolicy& p) {
  check_keys(j, "masking",
             {"kind", "unit_min", "unit_max", "keep_ratio", "p_max",
              "curriculum", "invert_complement"});
  std::string kind = mask_kind_name(p.kind);
  read_to(j, "kind", kind);
  p.kind = mask_kind_from_name(kind);
  read_to(j, "unit_min", p.grid.unit_min);
  read_to(j, "unit_max", p.grid.unit_max);
  read_to(j, "keep_ratio", p.grid.keep_ratio);
  read_to(j, "p_max", p.p_max);
  read_to(j, "curriculum", p.curriculum);
  read_to(j, "invert_complement", p.invert_complement);
}

void parse_match(const json& j, MatchWeights& w) {
  check_keys(j, "match", {"cls", "box", "focal_gamma", "focal_alpha"});
  read_to(j, "cls", w.cls);
  read_to(j, "box", w.box);
  read_to(j, "focal_gamma", w.focal_gamma);
  read_to(j, "focal_alpha", w.focal_alpha);
}

void parse_train(const json& j, TrainSettings& t) {
  check_keys(j, "train",
             {"epochs", "lr", "grad_clip", "decoupled", "depth_prior",
              "eval_every", "cls_weight", "box_weight", "hidden",
              "train_split", "eval_split", "confnet_hidden", "confnet_epochs",
              "confnet_lr"});
  read_to(j, "epochs", t.epochs);
  read_to(j, "lr", t.lr);
  read_to(j, "grad_clip", t.grad_clip);
  read_to(j, "decoupled", t.decoupled);
  read_to(j, "depth_prior", t.depth_prior);
  read_to(j, "eval_every", t.eval_every);
  read_to(j, "cls_weight", t.cls_weight);
  read_to(j, "box_weight", t.box_weight);
  read_to(j, "hidden", t.hidden);
  read_to(j, "train_split", t.train_split);
  read_to(j, "eval_split", t.eval_split);
  read_to(j, "confnet_hidden", t.confnet_hidden);
  read_to(j, "confnet_epochs", t.confnet_epochs);
  read_to(j, "confnet_lr", t.confnet_lr);
}

void parse_ablation(const json& j, AblationSettings& a) {
  check_keys(j, "ablation", {"epochs", "lr", "eval_draws"});
  read_to(j, "epochs", a.epochs);
  read_to(j, "lr", a.lr);
  read_to(j, "eval_draws", a.eval_draws);
  if (a.epochs < 0) config_error("'ablation.epochs' must be >= 0");
  if (!(a.lr > 0)) config_error("'ablation.lr' must be > 0");
  if (a.eval_draws < 1) config_error("'ablation.eval_draws' must be >= 1");
}

void parse_eval(const json& j, EvalConfig& e) {
  check_keys(j, "eval", {"thresholds", "ate_threshold"});
  read_to(j, "thresholds", e.thresholds);
  read_to(j, "ate_threshold", e.ate_threshold);
  if (e.thresholds.empty()) config_error("'eval.thresholds' must be non-empty");
}

void parse_paths(const json& j, Paths& p) {
  check_keys(j, "paths", {"data", "out", "weights", "confnet"});
  read_to(j, "data", p.data);
  read_to(j, "out", p.out);
  read_to(j, "weights", p.weights);
  read_to(j, "confnet", p.confnet);
}

const SplitSpec& find_split(const ExperimentConfig& cfg,
                            const std::string& name) {
  for (const auto& s : cfg.splits)
    if (s.name == name) return s;
  throw std::runtime_error("config: no split named '" + name + "'");
}

bool selected(const std::vector<std::string>& filter,
              const std::string& name) {
  if (filter.empty()) return true;
  return std::find(filter.begin(), filter.end(), name) != filter.end();
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw std::runtime_error("cannot create output directory: " + dir);
}

std::string opt_cell(const std::optional<double>& v) {
  return v ? fmt_g9(*v) : "absent";
}

}  // namespace

std::string ExperimentConfig::weights_path() const {
  return paths.weights.empty() ? join_path(paths.out, "weights.json")
                               : paths.weights;
}

std::string ExperimentConfig::confnet_path() const {
  return paths.confnet.empty() ? join_path(paths.out, "confnet.json")
                               : paths.confnet;
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.splits = {
      {"train", 40, {DomainKind::Source, 0.0}},
      {"val_source", 12, {DomainKind::Source, 0.0}},
      {"val_rain", 12, {DomainKind::Rain, 0.7}},
      {"val_night", 12, {DomainKind::Night, 0.7}},
      {"val_geo", 12, {DomainKind::Geo, 0.7}},
  };
  // A 3D proposal needs point support, so sparser clouds cost 3D recall.
  cfg.noise.min_points_3d = 5;
  cfg.match.scene_radius = cfg.sim.scene_radius;
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: malformed JSON in " + origin + ": " +
                             e.what());
  }
  check_keys(j, "<root>",
             {"version", "seed", "paths", "sim", "splits", "noise", "depth",
              "masking", "match", "train", "ablation", "eval"});
  const std::string version = j.value("version", std::string("<missing>"));
  if (version != "ccf-config-v1")
    config_error("version mismatch in " + origin +
                 ": expected ccf-config-v1, found " + version);
  if (!j.contains("seed")) config_error("'seed' is mandatory in " + origin);

  ExperimentConfig cfg = default_config();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("paths")) parse_paths(j.at("paths"), cfg.paths);
  if (j.contains("sim")) parse_sim(j.at("sim"), cfg.sim);
  if (j.contains("splits")) parse_splits(j.at("splits"), cfg.splits);
  if (j.contains("noise")) parse_noise(j.at("noise"), cfg.noise);
  if (j.contains("depth")) parse_depth(j.at("depth"), cfg.bins, cfg.sigma_base);
  if (j.contains("masking")) parse_masking(j.at("masking"), cfg.masking);
  if (j.contains("match")) parse_match(j.at("match"), cfg.match);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("ablation")) parse_ablation(j.at("ablation"), cfg.ablation);
  if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);

  cfg.sim.validate();
  cfg.bins.validate();
  cfg.masking.validate();
  cfg.match.scene_radius = cfg.sim.scene_radius;
  cfg.eval.n_classes = kNumObjectClasses;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

std::vector<Scene> load_split(const ExperimentConfig& cfg,
                              const std::string& split) {
  find_split(cfg, split);
  return read_dataset(join_path(cfg.paths.data, split + ".jsonl"));
}

TrainConfig make_train_config(const ExperimentConfig& cfg,
                              const ConfidenceNet* confnet) {
  TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.lr = cfg.train.lr;
  tc.grad_clip = cfg.train.grad_clip;
  tc.seed = cfg.seed;
  tc.decoupled = cfg.train.decoupled;
  tc.masking = cfg.masking;
  tc.noise = cfg.noise;
  tc.loss.match = cfg.match;
  tc.loss.cls_weight = cfg.train.cls_weight;
  tc.loss.box_weight = cfg.train.box_weight;
  tc.decoder.hidden = cfg.train.hidden;
  tc.queries.bins = cfg.bins;
  tc.queries.sigma_base = cfg.sigma_base;
  tc.queries.scene_radius = cfg.sim.scene_radius;
  tc.queries.confnet = confnet;
  if (!cfg.train.depth_prior) tc.queries.lambda_override = 1.0;
  tc.eval = cfg.eval;
  tc.eval_every = cfg.train.eval_every;
  return tc;
}

ConfidenceNet fit_confidence_stage(const ExperimentConfig& cfg,
                                   const std::vector<Scene>& scenes) {
  std::vector<DepthTrainSample> samples;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Scene& scene = scenes[s];
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
      const CameraModel& cam = scene.cameras[c];
      for (std::size_t g = 0; g < scene.gt_boxes.size(); ++g) {
        const auto pb = project_box3d(cam, scene.gt_boxes[g]);
        if (!pb) continue;
        const double gt_depth = camera_depth(cam, scene.gt_boxes[g].center);
        if (gt_depth <= 0) continue;
        DepthTrainSample sample;
        sample.d2 = image_depth_distribution(
            gt_depth, cfg.sigma_base, scene.domain, cfg.bins,
            derive_seed(cfg.seed, 41 + s, c, g));
        std::vector<double> depths;
        for (const auto& p : scene.points)
          if (frustum_contains(cam, *pb, {cfg.bins.d_min, cfg.bins.d_max},
                               p.position))
            depths.push_back(camera_depth(cam, p.position));
        sample.d3 = lidar_depth_histogram(depths, cfg.bins);
        sample.gt_depth = gt_depth;
        sample.empty_frustum = depths.empty();
        samples.push_back(std::move(sample));
      }
    }
  }
  if (samples.empty())
    throw std::runtime_error("confidence stage: no depth samples in split");
  ConfidenceNet net =
      ConfidenceNet::init(2 * cfg.bins.count, cfg.train.confnet_hidden,
                          derive_seed(cfg.seed, 40));
  ConfidenceTrainConfig tcfg;
  tcfg.epochs = cfg.train.confnet_epochs;
  tcfg.lr = cfg.train.confnet_lr;
  train_confidence(net, samples, tcfg, cfg.bins);
  return net;
}

void cmd_gen(const ExperimentConfig& cfg) {
  ensure_dir(cfg.paths.data);
  for (std::size_t s = 0; s < cfg.splits.size(); ++s) {
    const SplitSpec& split = cfg.splits[s];
    const auto scenes = parallel_map<Scene>(
        std::size_t(split.count), [&](std::size_t i) {
          Scene scene = generate_scene(cfg.sim, derive_seed(cfg.seed, s, i));
          if (split.domain.kind != DomainKind::Source ||
              split.domain.severity != 0.0)
            scene = apply_domain(scene, split.domain,
                                 derive_seed(cfg.seed, s, i, 1));
          return scene;
        });
    const std::string path = join_path(cfg.paths.data, split.name + ".jsonl");
    write_dataset(scenes, path);
    std::printf("%s: %d scenes (%s, severity %s) -> %s\n", split.name.c_str(),
                split.count, domain_name(split.domain.kind).c_str(),
                fmt_g9(split.domain.severity).c_str(), path.c_str());
  }
}

void cmd_pilot(const ExperimentConfig& cfg,
               const std::vector<std::string>& split_filter) {
  PilotConfig pc;
  pc.noise = cfg.noise;
  pc.bins = cfg.bins;
  pc.sigma_base = cfg.sigma_base;
  pc.match = cfg.match;
  pc.eval = cfg.eval;
  pc.seed = cfg.seed;
  std::vector<std::pair<std::string, std::vector<Scene>>> splits;
  for (const auto& s : cfg.splits) {
    if (!selected(split_filter, s.name)) continue;
    splits.emplace_back(s.name, load_split(cfg, s.name));
  }
  if (splits.empty()) throw std::runtime_error("pilot: no splits selected");
  ensure_dir(cfg.paths.out);
  const PilotTables tables = pilot_report(splits, pc);
  write_pilot_outputs(tables, cfg.paths.out);
  for (const auto& row : tables.splits)
    std::printf(
        "%s: native 2D mAP@50 %s, projected 3D %s; fused matched 3D:2D "
        "ratio %s; image depth MAE %s\n",
        row.split.c_str(), fmt_g9(row.native_2d_map50).c_str(),
        fmt_g9(row.projected_3d_map50).c_str(),
        fmt_g9(row.supervision.at("fused").ratio).c_str(),
        opt_cell(row.image_depth_mae).c_str());
}

namespace {

void write_train_outputs(const ExperimentConfig& cfg,
                         const TrainResult& result,
                         const std::string& log_name,
                         const std::string& curve_name) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& log : result.log)
    rows.push_back({std::to_string(log.epoch), fmt_g9(log.loss),
                    fmt_g9(log.cls), fmt_g9(log.box), fmt_g9(log.matched_2d),
                    fmt_g9(log.matched_3d), opt_cell(log.eval_map)});
  write_csv(join_path(cfg.paths.out, log_name),
            {"epoch", "loss", "cls", "box", "matched_2d", "matched_3d",
             "eval_map"},
            rows);
  BarSeries curve{"loss", {}};
  for (const auto& log : result.log) curve.values.push_back(log.loss);
  write_text_file(join_path(cfg.paths.out, curve_name),
                  svg_line_chart("Training loss", {curve}));
}

}  // namespace

void cmd_train(const ExperimentConfig& cfg) {
  const auto train_scenes = load_split(cfg, cfg.train.train_split);
  const auto eval_scenes = load_split(cfg, cfg.train.eval_split);
  ensure_dir(cfg.paths.out);

  std::optional<ConfidenceNet> confnet;
  if (cfg.train.depth_prior) {
    confnet = fit_confidence_stage(cfg, train_scenes);
    save_confidence_net(*confnet, cfg.confnet_path());
  }
  const TrainConfig tc = make_train_config(cfg, confnet ? &*confnet : nullptr);
  TrainResult result = train_decoder(train_scenes, eval_scenes, tc);
  if (result.log.empty()) {
    // Zero-epoch run: keep the initial weights and log an eval-only row.
    EpochLog log;
    log.eval_map = evaluate_weights(result.weights, eval_scenes, cfg.noise,
                                    tc.queries, cfg.eval,
                                    derive_seed(cfg.seed, 3));
    result.log.push_back(std::move(log));
  }
  save_decoder_weights(result.weights, tc.decoder, cfg.weights_path());
  write_train_outputs(cfg, result, "train_log.csv", "train_loss.svg");
  const EpochLog& last = result.log.back();
  std::printf("trained %d epochs on %s: loss %s, eval mAP (%s) %s -> %s\n",
              cfg.train.epochs, cfg.train.train_split.c_str(),
              fmt_g9(last.loss).c_str(), cfg.train.eval_split.c_str(),
              opt_cell(last.eval_map).c_str(), cfg.weights_path().c_str());
}

namespace {

struct SplitEval {
  std::string split;
  EvalReport report;
};

std::vector<Detection> oracle_detections(const Scene& scene) {
  std::vector<Detection> dets;
  for (const auto& gt : scene.gt_boxes) {
    Detection d;
    d.box = gt;
    d.box.score = 1.0;
    d.score = 1.0;
    d.class_id = gt.class_id;
    d.origin = DetectionOrigin::Fused;
    dets.push_back(d);
  }
  return dets;
}

SplitEval eval_one_split(const ExperimentConfig& cfg,
                         const std::string& split_name,
                         std::size_t split_index, const DecoderWeights* w,
                         const QueryBuildConfig& qcfg, bool oracle) {
  const auto scenes = load_split(cfg, split_name);
  const DetectionSet dets = parallel_map<std::vector<Detection>>(
      scenes.size(), [&](std::size_t i) {
        if (oracle) return oracle_detections(scenes[i]);
        return predict_scene(*w, scenes[i], cfg.noise, qcfg,
                             derive_seed(cfg.seed, 21, split_index, i));
      });
  GtSet gts(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) gts[i] = scenes[i].gt_boxes;
  return {split_name, evaluate(dets, gts, cfg.eval)};
}

std::string origin_cell(const EvalReport& r, DetectionOrigin origin) {
  const auto it = r.per_origin_map.find(origin);
  return it == r.per_origin_map.end() ? "absent" : fmt_g9(it->second);
}

void write_eval_outputs(const ExperimentConfig& cfg,
                        const std::vector<SplitEval>& evals,
                        const std::string& prefix) {
  std::vector<std::vector<std::string>> ap_rows, summary_rows;
  for (const auto& e : evals) {
    for (const auto& [key, ap] : e.report.ap)
      ap_rows.push_back({e.split, std::to_string(key.first),
                         fmt_g9(key.second), fmt_g9(ap)});
    summary_rows.push_back(
        {e.split, fmt_g9(e.report.map),
         origin_cell(e.report, DetectionOrigin::From2D),
         origin_cell(e.report, DetectionOrigin::From3D),
         opt_cell(e.report.mean_translation_error_m)});
  }
  write_csv(join_path(cfg.paths.out, prefix + "_ap.csv"),
            {"split", "class", "threshold", "ap"}, ap_rows);
  write_csv(join_path(cfg.paths.out, prefix + "_summary.csv"),
            {"split", "map", "map_from_2d", "map_from_3d",
             "mean_translation_error_m"},
            summary_rows);

  std::vector<std::string> labels;
  BarSeries map_series{"mAP", {}};
  for (const auto& e : evals) {
    labels.push_back(e.split);
    map_series.values.push_back(e.report.map);
  }
  write_text_file(join_path(cfg.paths.out, prefix + "_map.svg"),
                  svg_bar_chart("Detection mAP by split", labels,
                                {map_series}));
}

}  // namespace

void cmd_eval(const ExperimentConfig& cfg,
              const std::vector<std::string>& split_filter) {
  std::ifstream probe(cfg.weights_path(), std::ios::binary);
  if (!probe)
    throw std::runtime_error("cannot open weights: " + cfg.weights_path());
  json j;
  try {
    probe >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed weights file " + cfg.weights_path() +
                             ": " + e.what());
  }
  const bool oracle = j.is_object() && j.value("oracle", false);
  DecoderWeights weights = DecoderWeights::init(DecoderConfig{}, 0);
  if (!oracle) weights = load_decoder_weights(cfg.weights_path());

  std::optional<ConfidenceNet> confnet;
  QueryBuildConfig qcfg;
  qcfg.bins = cfg.bins;
  qcfg.sigma_base = cfg.sigma_base;
  qcfg.scene_radius = cfg.sim.scene_radius;
  if (!oracle && cfg.train.depth_prior) {
    confnet = load_confidence_net(cfg.confnet_path());
    qcfg.confnet = &*confnet;
  }
  if (!cfg.train.depth_prior) qcfg.lambda_override = 1.0;

  ensure_dir(cfg.paths.out);
  std::vector<SplitEval> evals;
  for (std::size_t s = 0; s < cfg.splits.size(); ++s) {
    if (!selected(split_filter, cfg.splits[s].name)) continue;
    evals.push_back(eval_one_split(cfg, cfg.splits[s].name, s,
                                   oracle ? nullptr : &weights, qcfg,
                                   oracle));
  }
  if (evals.empty()) throw std::runtime_error("eval: no splits selected");
  write_eval_outputs(cfg, evals, "eval");
  for (const auto& e : evals)
    std::printf("%s: mAP %s (from 2D %s, from 3D %s)\n", e.split.c_str(),
                fmt_g9(e.report.map).c_str(),
                origin_cell(e.report, DetectionOrigin::From2D).c_str(),
                origin_cell(e.report, DetectionOrigin::From3D).c_str());
}

void cmd_mask(const ExperimentConfig& cfg) {
  ensure_dir(cfg.paths.out);
  const Scene scene = generate_scene(cfg.sim, derive_seed(cfg.seed, 31));
  const CameraModel& cam = scene.cameras.front();

  // Projectable points through camera 0 carry the partition statistics.
  std::vector<std::pair<int, int>> pixels;
  for (const auto& p : scene.points) {
    const auto px = mask_pixel(cam, p.position);
    if (px) pixels.push_back(*px);
  }

  constexpr int kReps = 8;
  const MaskKind kinds[] = {MaskKind::None, MaskKind::ConsistentGrid,
                            MaskKind::ComplementaryGrid,
                            MaskKind::ComplementaryRandom};
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < std::size(kinds); ++k) {
    const MaskKind kind = kinds[k];
    for (int rep = 0; rep < kReps; ++rep) {
      const std::uint64_t seed = derive_seed(cfg.seed, 32, k, rep);
      MaskGrid mask = MaskGrid::Constant(cam.height, cam.width, 1);
      if (kind == MaskKind::ComplementaryRandom)
        mask = bernoulli_cell_mask(cam.height, cam.width, cfg.masking.grid,
                                   seed);
      else if (kind != MaskKind::None)
        mask = gridmask(cam.height, cam.width, cfg.masking.grid, seed);
      int retained = 0;
      for (const auto& px : pixels) {
        const bool visible = mask(px.first, px.second) != 0;
        const bool keep = kind == MaskKind::None
                              ? true
                              : (kind == MaskKind::ConsistentGrid ? visible
                                                                  : !visible);
        if (keep) ++retained;
      }
      const double retained_fraction =
          pixels.empty() ? 1.0 : double(retained) / double(pixels.size());
      rows.push_back({std::to_string(seed), mask_kind_name(kind),
                      fmt_g9(masked_fraction(mask)),
                      fmt_g9(retained_fraction)});
      if (rep == 0 && kind != MaskKind::None)
        write_text_file(
            join_path(cfg.paths.out, "mask_" + mask_kind_name(kind) + ".svg"),
            svg_mask(mask, mask_kind_name(kind)));
    }
  }
  write_csv(join_path(cfg.paths.out, "mask_stats.csv"),
            {"seed", "variant", "masked_fraction", "points_retained_fraction"},
            rows);
  std::printf("mask stats over %d projectable points -> %s\n",
              int(pixels.size()),
              join_path(cfg.paths.out, "mask_stats.csv").c_str());
}

namespace {

struct AblateRun {
  std::string label;
  ExperimentConfig cfg;
  std::vector<std::string> extra_cells;  // axis values for the table
};

struct AblEval {
  double map = 0.0;
  std::string from_2d = "absent";
  std::string from_3d = "absent";
};

// Mean split score over `draws` proposal simulations. Variant deltas sit near
// the noise of a single detector draw, so each arm is scored against several;
// draw k of every arm shares its stream, keeping the comparison paired.
AblEval eval_split_mean(const ExperimentConfig& cfg,
                        const std::string& split_name, std::size_t split_index,
                        const DecoderWeights& w, const QueryBuildConfig& qcfg,
                        int draws) {
  const auto scenes = load_split(cfg, split_name);
  GtSet gts(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) gts[i] = scenes[i].gt_boxes;
  AblEval out;
  double sum_2d = 0.0, sum_3d = 0.0;
  bool has_2d = true, has_3d = true;
  for (int k = 0; k < draws; ++k) {
    const std::uint64_t draw_seed = derive_seed(cfg.seed, 25, split_index,
                                                std::uint64_t(k));
    const DetectionSet dets = parallel_map<std::vector<Detection>>(
        scenes.size(), [&](std::size_t i) {
          return predict_scene(w, scenes[i], cfg.noise, qcfg,
                               derive_seed(draw_seed, i));
        });
    const EvalReport rep = evaluate(dets, gts, cfg.eval);
    out.map += rep.map;
    const auto it2 = rep.per_origin_map.find(DetectionOrigin::From2D);
    const auto it3 = rep.per_origin_map.find(DetectionOrigin::From3D);
    has_2d = has_2d && it2 != rep.per_origin_map.end();
    has_3d = has_3d && it3 != rep.per_origin_map.end();
    if (it2 != rep.per_origin_map.end()) sum_2d += it2->second;
    if (it3 != rep.per_origin_map.end()) sum_3d += it3->second;
  }
  out.map /= draws;
  if (has_2d) out.from_2d = fmt_g9(sum_2d / draws);
  if (has_3d) out.from_3d = fmt_g9(sum_3d / draws);
  return out;
}

void run_ablation(const ExperimentConfig& base, std::vector<AblateRun> runs,
                  const std::vector<std::string>& axis_columns,
                  const std::string& table_name, int eval_draws) {
  ensure_dir(base.paths.out);
  const auto train_scenes = load_split(base, base.train.train_split);

  // The confidence stage depends only on (scenes, seed), so runs share it.
  std::optional<ConfidenceNet> confnet;
  for (const auto& run : runs)
    if (run.cfg.train.depth_prior && !confnet) {
      confnet = fit_confidence_stage(base, train_scenes);
      break;
    }

  std::vector<std::vector<std::string>> rows;
  for (auto& run : runs) {
    const auto eval_scenes = load_split(run.cfg, run.cfg.train.eval_split);
    const ConfidenceNet* net =
        run.cfg.train.depth_prior ? &*confnet : nullptr;
    const TrainConfig tc = make_train_config(run.cfg, net);
    const TrainResult result = train_decoder(train_scenes, eval_scenes, tc);
    write_train_outputs(run.cfg, result, "train_log_" + run.label + ".csv",
                        "train_loss_" + run.label + ".svg");

    QueryBuildConfig qcfg = tc.queries;
    for (std::size_t s = 0; s < run.cfg.splits.size(); ++s) {
      const std::string& split = run.cfg.splits[s].name;
      if (split == run.cfg.train.train_split) continue;
      AblEval cell;
      if (eval_draws > 1) {
        cell = eval_split_mean(run.cfg, split, s, result.weights, qcfg,
                               eval_draws);
      } else {
        const SplitEval se = eval_one_split(run.cfg, split, s, &result.weights,
                                            qcfg, false);
        cell.map = se.report.map;
        cell.from_2d = origin_cell(se.report, DetectionOrigin::From2D);
        cell.from_3d = origin_cell(se.report, DetectionOrigin::From3D);
      }
      std::vector<std::string> row{run.label};
      row.insert(row.end(), run.extra_cells.begin(), run.extra_cells.end());
      row.push_back(split);
      row.push_back(fmt_g9(cell.map));
      row.push_back(cell.from_2d);
      row.push_back(cell.from_3d);
      rows.push_back(std::move(row));
      std::printf("%s / %s: mAP %s\n", run.label.c_str(), split.c_str(),
                  fmt_g9(cell.map).c_str());
    }
  }
  std::vector<std::string> header{"run"};
  header.insert(header.end(), axis_columns.begin(), axis_columns.end());
  header.insert(header.end(), {"split", "map", "map_from_2d", "map_from_3d"});
  write_csv(join_path(base.paths.out, table_name), header, rows);
}

}  // namespace

void cmd_ablate(const ExperimentConfig& cfg, const std::string& axes) {
  if (axes == "components") {
    std::vector<AblateRun> runs;
    for (int qdl = 0; qdl <= 1; ++qdl)
      for (int lgdp = 0; lgdp <= 1; ++lgdp)
        for (int ccm = 0; ccm <= 1; ++ccm) {
          AblateRun run;
          run.cfg = cfg;
          run.cfg.train.decoupled = qdl != 0;
          run.cfg.train.depth_prior = lgdp != 0;
          if (ccm == 0) run.cfg.masking.kind = MaskKind::None;
          run.label = "qdl" + std::to_string(qdl) + "_lgdp" +
                      std::to_string(lgdp) + "_ccm" + std::to_string(ccm);
          run.extra_cells = {std::to_string(qdl), std::to_string(lgdp),
                             std::to_string(ccm)};
          runs.push_back(std::move(run));
        }
    run_ablation(cfg, std::move(runs), {"decoupled", "depth_prior", "masking"},
                 "ablation_components.csv", 1);
    return;
  }
  if (axes == "masking") {
    // Fused-only arms: with decoupled supervision on, every query origin is
    // taught directly no matter what the mask removed, which papers over the
    // fused-match competition masking is meant to rebalance.
    std::vector<AblateRun> runs;
    for (MaskKind kind :
         {MaskKind::None, MaskKind::ConsistentGrid, MaskKind::ComplementaryGrid,
          MaskKind::ComplementaryRandom}) {
      AblateRun run;
      run.cfg = cfg;
      run.cfg.masking.kind = kind;
      run.cfg.train.decoupled = false;
      run.cfg.train.epochs = cfg.ablation.epochs;
      run.cfg.train.lr = cfg.ablation.lr;
      run.label = mask_kind_name(kind);
      run.extra_cells = {mask_kind_name(kind)};
      runs.push_back(std::move(run));
    }
    run_ablation(cfg, std::move(runs), {"variant"}, "ablation_masking.csv",
                 cfg.ablation.eval_draws);
    return;
  }
  throw std::runtime_error("ablate: unknown axes '" + axes +
                           "' (use components or masking)");
}

}  // namespace ccf
