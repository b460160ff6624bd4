#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccf/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string splits_list;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_splits) {
  cmd->add_option("--config", args.config_path, "experiment config JSON")
      ->required();
  cmd->add_option("--out", args.out_dir, "override the output directory");
  auto* seed = cmd->add_option("--seed", args.seed, "override the config seed");
  seed->each([&args](const std::string&) { args.seed_set = true; });
  if (with_splits)
    cmd->add_option("--splits", args.splits_list,
                    "comma-separated split names (default: all)");
}

ccf::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  ccf::ExperimentConfig cfg = ccf::load_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out_dir.empty()) cfg.paths.out = args.out_dir;
  return cfg;
}

std::vector<std::string> parse_splits(const std::string& list) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t comma = list.find(',', start);
    const std::string item = list.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic multi-modal fusion laboratory"};
  app.require_subcommand(1);

  CommonArgs gen_args, pilot_args, train_args, eval_args, mask_args,
      ablate_args;
  int epochs_override = -1;
  std::string ablate_axes = "components";

  CLI::App* gen = app.add_subcommand("gen", "generate the per-split datasets");
  add_common(gen, gen_args, false);

  CLI::App* pilot =
      app.add_subcommand("pilot", "measure raw-proposal modality imbalance");
  add_common(pilot, pilot_args, true);

  CLI::App* train = app.add_subcommand("train", "train the fusion decoder");
  add_common(train, train_args, false);
  train->add_option("--epochs", epochs_override, "override training epochs");

  CLI::App* eval =
      app.add_subcommand("eval", "evaluate trained weights per split");
  add_common(eval, eval_args, true);

  CLI::App* mask =
      app.add_subcommand("mask", "mask-variant statistics and renderings");
  add_common(mask, mask_args, false);

  CLI::App* ablate =
      app.add_subcommand("ablate", "orchestrated train+eval toggle grid");
  add_common(ablate, ablate_args, false);
  ablate->add_option("--ablate", ablate_axes,
                     "axis grid: components (2^3 toggles) or masking");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ccf::ExperimentConfig cfg = load_with_overrides(gen_args);
      // gen's output is the dataset itself.
      ccf::ExperimentConfig adjusted = cfg;
      if (!gen_args.out_dir.empty()) adjusted.paths.data = gen_args.out_dir;
      ccf::cmd_gen(adjusted);
    } else if (pilot->parsed()) {
      ccf::cmd_pilot(load_with_overrides(pilot_args),
                     parse_splits(pilot_args.splits_list));
    } else if (train->parsed()) {
      ccf::ExperimentConfig cfg = load_with_overrides(train_args);
      if (epochs_override >= 0) cfg.train.epochs = epochs_override;
      ccf::cmd_train(cfg);
    } else if (eval->parsed()) {
      ccf::cmd_eval(load_with_overrides(eval_args),
                    parse_splits(eval_args.splits_list));
    } else if (mask->parsed()) {
      ccf::cmd_mask(load_with_overrides(mask_args));
    } else if (ablate->parsed()) {
      ccf::cmd_ablate(load_with_overrides(ablate_args), ablate_axes);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
