#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "faithbench/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (json)")->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the config seed list with a single seed");
}

faithbench::ExperimentConfig load(const CommonArgs& args) {
  faithbench::ExperimentConfig config = faithbench::load_config(args.config_path);
  if (args.seed >= 0) config.seeds = {static_cast<std::uint64_t>(args.seed)};
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"faithbench: attention-explanation faithfulness test bench"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, ablate_args, depth_args, datamap_args, behavior_args;
  CLI::App* cmd_train = app.add_subcommand("train", "train model zoo checkpoints");
  add_common(cmd_train, train_args);
  CLI::App* cmd_eval =
      app.add_subcommand("evaluate", "methods x metrics x strategies faithfulness grid");
  add_common(cmd_eval, eval_args);
  CLI::App* cmd_ablate =
      app.add_subcommand("ablate", "attention-gradient formulation ablation table");
  add_common(cmd_ablate, ablate_args);
  CLI::App* cmd_depth =
      app.add_subcommand("depth-study", "violation ratio vs classifier depth curve");
  add_common(cmd_depth, depth_args);
  CLI::App* cmd_datamap =
      app.add_subcommand("datamap", "per-example correlation / confidence-perturbation scatter");
  add_common(cmd_datamap, datamap_args);
  CLI::App* cmd_behavior =
      app.add_subcommand("behavior", "violator vs non-violator rank profiles");
  add_common(cmd_behavior, behavior_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) faithbench::run_train(load(train_args), train_args.out_dir);
    if (cmd_eval->parsed()) faithbench::run_evaluate(load(eval_args), eval_args.out_dir);
    if (cmd_ablate->parsed()) faithbench::run_ablation(load(ablate_args), ablate_args.out_dir);
    if (cmd_depth->parsed()) faithbench::run_depth_study(load(depth_args), depth_args.out_dir);
    if (cmd_datamap->parsed()) faithbench::run_datamap(load(datamap_args), datamap_args.out_dir);
    if (cmd_behavior->parsed())
      faithbench::run_behavior(load(behavior_args), behavior_args.out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
