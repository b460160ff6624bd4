#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccf/decoder.hpp"
#include "ccf/evalkit.hpp"
#include "ccf/masking.hpp"
#include "ccf/scenesim.hpp"

namespace ccf {

struct SplitSpec {
  std::string name;
  int count = 0;
  DomainTag domain;
};

struct TrainSettings {
  int epochs = 30;
  double lr = 0.08;
  double grad_clip = 10.0;
  bool decoupled = true;
  bool depth_prior = true;
  int eval_every = 0;
  double cls_weight = 1.0;
  double box_weight = 5.0;
  int hidden = 32;
  std::string train_split = "train";
  std::string eval_split = "val_source";
  int confnet_hidden = 16;
  int confnet_epochs = 60;
  double confnet_lr = 0.5;
};

// The masking sweep is a slower experiment than the main training run: the
// variants only separate once the unmasked model has converged, so it gets
// its own schedule, and mAP deltas between variants sit near evaluation
// noise, so each split is scored as the mean over several proposal draws.
struct AblationSettings {
  int epochs = 60;
  double lr = 0.03;
  int eval_draws = 5;
};

struct Paths {
  std::string data = "data";
  std::string out = "out";
  std::string weights;  // empty -> <out>/weights.json
  std::string confnet;  // empty -> <out>/confnet.json
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Paths paths;
  SimConfig sim;
  std::vector<SplitSpec> splits;
  ProposalNoise noise;
  DepthBins bins;
  double sigma_base = 2.2;
  MaskPolicy masking;
  MatchWeights match;
  TrainSettings train;
  AblationSettings ablation;
  EvalConfig eval;

  std::string weights_path() const;
  std::string confnet_path() const;
};

// Built-in experiment: a LiDAR-favoring rig with one source training split
// and one shifted validation split per domain.
ExperimentConfig default_config();

// Strict load: "version" and "seed" are mandatory, every other section is
// optional, unknown keys anywhere are errors naming the offending key path.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin);

std::vector<Scene> load_split(const ExperimentConfig& cfg,
                              const std::string& split);

TrainConfig make_train_config(const ExperimentConfig& cfg,
                              const ConfidenceNet* confnet);

// Learned blend-weight stage: collects per-instance (image belief, frustum
// histogram, gt depth) samples from the scenes and fits the confidence net.
ConfidenceNet fit_confidence_stage(const ExperimentConfig& cfg,
                                   const std::vector<Scene>& scenes);

// Commands. Each is a pure function of (config, seed) and throws on failure;
// the CLI maps exceptions to nonzero exit codes. An empty split filter means
// every configured split.
void cmd_gen(const ExperimentConfig& cfg);
void cmd_pilot(const ExperimentConfig& cfg,
               const std::vector<std::string>& split_filter);
void cmd_train(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg,
              const std::vector<std::string>& split_filter);
void cmd_mask(const ExperimentConfig& cfg);

// axes = "components" (2^3 grid over decoupled loss, depth prior, masking at
// the configured training settings) or "masking" (mask-variant sweep). The
// masking sweep trains fused-only on the ablation schedule: decoupled
// supervision feeds every query origin no matter what the mask removed, which
// papers over exactly the competition channel masking acts on.
void cmd_ablate(const ExperimentConfig& cfg, const std::string& axes);

}  // namespace ccf
