#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sslf/commands.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON run-config file");
  cmd->add_option("--out", args.out_dir, "Output directory (overrides the config file)");
  cmd->add_option("--seed", args.seed, "Seed override for training and data synthesis");
}

sslf::RunConfig resolve(const CommonArgs& args) {
  sslf::RunConfig config;
  if (!args.config_path.empty()) config = sslf::load_run_config(args.config_path);
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  if (args.seed) {
    config.train.seed = *args.seed;
    config.synthetic.seed = *args.seed;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised pretraining and fusion-classifier training engine"};
  app.require_subcommand(1);

  CommonArgs synth_args, pretrain_args, select_args, train_args, eval_args;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  add_common(synth, synth_args);

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain one U-Net per pretext task");
  add_common(pretrain, pretrain_args);

  std::vector<std::string> report_paths;
  auto* select = app.add_subcommand("select", "Pick the pretext with the lowest validation MSE");
  add_common(select, select_args);
  select->add_option("--reports", report_paths,
                     "Pretext report files (default: the ones `pretrain` wrote)");

  std::string variant = "fusion";
  std::string pretrained;
  std::optional<bool> freeze_encoder;
  auto* train = app.add_subcommand("train", "Train a classifier variant");
  add_common(train, train_args);
  train->add_option("--variant", variant,
                    "One of: unet, efficient, fusion, fusion-attention, all");
  train->add_option("--pretrained", pretrained, "Pretrained U-Net checkpoint to start from");
  train->add_option("--freeze-encoder", freeze_encoder,
                    "Override whether the U-Net stays frozen during training");

  std::string checkpoint, split = "val";
  auto* eval = app.add_subcommand("eval", "Evaluate a classifier checkpoint");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", checkpoint, "Classifier checkpoint to evaluate")->required();
  eval->add_option("--split", split, "Dataset split: val, train, or all");

  app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return sslf::run_guarded(
      [&]() -> int {
        if (synth->parsed()) return sslf::cmd_synth(resolve(synth_args), std::cout);
        if (pretrain->parsed()) return sslf::cmd_pretrain(resolve(pretrain_args), std::cout);
        if (select->parsed()) {
          std::vector<std::filesystem::path> paths(report_paths.begin(), report_paths.end());
          return sslf::cmd_select(resolve(select_args), paths, std::cout);
        }
        if (train->parsed()) {
          std::optional<std::filesystem::path> ckpt;
          if (!pretrained.empty()) ckpt = pretrained;
          return sslf::cmd_train(resolve(train_args), variant, ckpt, freeze_encoder, std::cout);
        }
        if (eval->parsed()) return sslf::cmd_eval(resolve(eval_args), checkpoint, split, std::cout);
        return sslf::cmd_gradcheck(std::cout);
      },
      std::cerr);
}
