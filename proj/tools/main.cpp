#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using namespace psinet;
using namespace psinet::cli;

void add_net_flags(CLI::App* app, NetFlags& f) {
  app->add_option("--variant", f.variant, "Decoders: m, mc, md or mcd");
  app->add_option("--classes", f.classes, "Number of classes including background");
  app->add_option("--stages", f.stages, "Encoder stages");
  app->add_option("--base-channels", f.base_channels, "Channels of the first stage");
  app->add_option("--bottleneck-upsample", f.bottleneck_upsample, "Bottleneck upsampling factor (2 or 4)");
  app->add_option("--convs-per-stage", f.convs_per_stage, "Conv+ReLU blocks per stage");
  app->add_option("--size", f.size, "Crop and resize inputs to this square side");
}

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--epochs", f.epochs, "Training epochs");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--batch", f.batch, "Batch size");
  app->add_option("--lambda1", f.lambda1, "Mask loss weight");
  app->add_option("--lambda2", f.lambda2, "Contour loss weight");
  app->add_option("--lambda3", f.lambda3, "Distance loss weight");
  app->add_option("--seed", f.seed, "Seed for initialization, split and shuffling");
  app->add_option("--split", f.split, "Fraction of samples used for training");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task segmentation network: mask, contour and distance decoders"};
  app.require_subcommand(1);

  std::optional<std::filesystem::path> config_file;
  NetFlags net_flags;
  TrainFlags train_flags;

  DeriveArgs derive;
  std::optional<std::size_t> derive_classes;
  auto* derive_cmd = app.add_subcommand("derive", "Derive contour and distance maps from class-index masks");
  derive_cmd->add_option("--data", derive.masks, "Mask directory (or a dataset root with masks/)")->required();
  derive_cmd->add_option("--out", derive.out, "Output root; receives contours/ and distances/")->required();
  derive_cmd->add_option("--classes", derive_classes, "Number of classes including background");
  derive_cmd->add_option("--config", config_file, "key=value config file");

  SynthArgs synth;
  std::size_t synth_size = 64, min_inst = 1, max_inst = 1, synth_classes = 2;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic ellipse dataset");
  synth_cmd->add_option("--out", synth.out, "Dataset root")->required();
  synth_cmd->add_option("--count", synth.count, "Number of samples")->capture_default_str();
  synth_cmd->add_option("--size", synth_size, "Square image side")->capture_default_str();
  synth_cmd->add_option("--min-instances", min_inst, "Fewest ellipses per image")->capture_default_str();
  synth_cmd->add_option("--max-instances", max_inst, "Most ellipses per image")->capture_default_str();
  synth_cmd->add_option("--classes", synth_classes, "2, or 3 for nested inner ellipses")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a network on a dataset directory");
  train_cmd->add_option("--data", train_args.data, "Dataset root")->required();
  train_cmd->add_option("--out", train_args.out, "Run directory for logs and checkpoints")->required();
  train_cmd->add_option("--config", config_file, "key=value config file; flags take precedence");
  add_net_flags(train_cmd, net_flags);
  add_train_flags(train_cmd, train_flags);

  EvalArgs eval;
  std::string widths_text, split_text = "all";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write metric CSVs");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "Dataset root")->required();
  eval_cmd->add_option("--out", eval.out, "Directory for the CSV files")->required();
  eval_cmd->add_option("--widths", widths_text, "Comma-separated trimap widths");
  eval_cmd->add_flag("--ellipse-fit", eval.ellipse_fit, "Replace each predicted class by its fitted ellipse");
  eval_cmd->add_option("--split", split_text, "all, train or test (the checkpoint's own split)")
      ->check(CLI::IsMember({"all", "train", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--variant", eval.variant, "Expected variant; rejected if the checkpoint differs");
  eval_cmd->add_option("--batch", eval.batch, "Inference batch size")->capture_default_str();

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Write predicted mask, contour and distance images");
  predict_cmd->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("--out", predict.out, "Output directory")->required();
  predict_cmd->add_option("images", predict.images, "Input PNG images")->required();

  CLI11_PARSE(app, argc, argv);

  return run_reporting(
      [&]() -> int {
        if (*derive_cmd) {
          NetFlags nf;
          nf.classes = derive_classes;
          const RunConfig rc = resolve_config(config_file, nf, {});
          derive.num_classes = rc.net.num_classes;
          derive.targets = rc.train.targets;
          return cmd_derive(derive, std::cout);
        }
        if (*synth_cmd) {
          synth.options.height = synth.options.width = synth_size;
          synth.options.min_instances = min_inst;
          synth.options.max_instances = max_inst;
          synth.options.num_classes = synth_classes;
          return cmd_synth(synth, std::cout);
        }
        if (*train_cmd) {
          train_args.config = resolve_config(config_file, net_flags, train_flags);
          return cmd_train(train_args, std::cout);
        }
        if (*eval_cmd) {
          if (!widths_text.empty()) eval.widths = parse_widths(widths_text);
          eval.split = split_text == "train" ? EvalSplit::kTrain
                       : split_text == "test" ? EvalSplit::kTest
                                              : EvalSplit::kAll;
          return cmd_eval(eval, std::cout);
        }
        return cmd_predict(predict, std::cout);
      },
      std::cerr);
}
