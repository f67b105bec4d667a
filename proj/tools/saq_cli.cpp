// saqlab: operator front-end for the quantization-aware training laboratory.
//
// Subcommands: train, search, finetune, bops, probe, landscape. Every flag
// mirrors a config key; --set section.key=value overrides anything. Exit
// codes: 0 success, 2 configuration/value errors, 3 infeasible budget,
// 4 numeric abort, 5 I/O failure.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "saq/config.hpp"
#include "saq/error.hpp"
#include "saq/run.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string resume;
  std::string checkpoint;
  std::string log_path;
  long long stop_after = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "Config file (key=value with [section] headers)");
  cmd->add_option("-s,--set", args.overrides, "Override: section.key=value (repeatable)");
  cmd->add_option("--log", args.log_path, "Also write log records to this file");
  cmd->add_flag("-q,--quiet", args.quiet, "Do not echo log records to stdout");
}

saq::RunConfig make_config(const CommonArgs& args) {
  saq::RunConfig cfg;
  if (!args.config_path.empty()) cfg = saq::load_config(args.config_path);
  for (const std::string& assignment : args.overrides) saq::apply_override(cfg, assignment);
  cfg.validate();
  return cfg;
}

saq::RunLogger make_logger(const CommonArgs& args) {
  saq::RunLogger log;
  log.set_echo(!args.quiet);
  if (!args.log_path.empty()) log.open_file(args.log_path);
  return log;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saqlab: sharpness-aware quantized training and bitwidth search"};
  app.require_subcommand(1);

  CommonArgs train_args, search_args, finetune_args, bops_args, probe_args, landscape_args;

  CLI::App* train = app.add_subcommand("train", "Fixed-bitwidth training");
  add_common(train, train_args);
  train->add_option("--resume", train_args.resume, "Continue from a checkpoint");
  train->add_option("--stop-after", train_args.stop_after,
                    "Interrupt after this many epochs (config unchanged; resume later)");

  CLI::App* search = app.add_subcommand("search", "Bitwidth search under a cost budget");
  add_common(search, search_args);
  search->add_option("--resume", search_args.resume, "Continue from a search checkpoint");

  CLI::App* finetune = app.add_subcommand("finetune", "Fine-tune a checkpointed model at its chosen bitwidths");
  add_common(finetune, finetune_args);
  finetune->add_option("--from", finetune_args.checkpoint, "Checkpoint to fine-tune from")->required();

  CLI::App* bops = app.add_subcommand("bops", "Bit-operation cost table");
  add_common(bops, bops_args);

  CLI::App* probe = app.add_subcommand("probe", "Top Hessian eigenvalue");
  add_common(probe, probe_args);
  probe->add_option("--from", probe_args.checkpoint, "Probe this checkpoint's weights");

  CLI::App* landscape = app.add_subcommand("landscape", "2-D loss-surface slice");
  add_common(landscape, landscape_args);
  landscape->add_option("--from", landscape_args.checkpoint, "Slice around this checkpoint's weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      saq::RunLogger log = make_logger(train_args);
      const saq::TrainResult res =
          saq::cmd_train(make_config(train_args), log, train_args.resume, train_args.stop_after);
      std::printf("train done epochs=%lld val_acc=%.2f checkpoint=%s\n",
                  static_cast<long long>(res.epochs_completed), res.val.accuracy,
                  res.checkpoint_path.c_str());
    } else if (search->parsed()) {
      saq::RunLogger log = make_logger(search_args);
      const saq::SearchResult res = saq::cmd_search(make_config(search_args), log, search_args.resume);
      std::string bits;
      for (std::size_t i = 0; i < res.chosen_bits.size(); ++i)
        bits += (i ? "," : "") + std::to_string(res.chosen_bits[i]);
      std::printf("search done bits=%s bops=%.6g budget=%.6g val_acc=%.2f checkpoint=%s\n",
                  bits.c_str(), res.bops, res.budget, res.val.accuracy,
                  res.checkpoint_path.c_str());
    } else if (finetune->parsed()) {
      saq::RunLogger log = make_logger(finetune_args);
      const saq::FinetuneResult res =
          saq::cmd_finetune(make_config(finetune_args), finetune_args.checkpoint, log);
      std::printf("finetune done epochs=%lld val_acc=%.2f checkpoint=%s\n",
                  static_cast<long long>(res.epochs_completed), res.val.accuracy,
                  res.checkpoint_path.c_str());
    } else if (bops->parsed()) {
      saq::RunLogger log = make_logger(bops_args);
      const saq::BopsResult res = saq::cmd_bops(make_config(bops_args), log);
      std::printf("%s\n", res.formatted_total.c_str());
    } else if (probe->parsed()) {
      saq::RunLogger log = make_logger(probe_args);
      const saq::ProbeResult res = saq::cmd_probe(make_config(probe_args), log, probe_args.checkpoint);
      std::printf("lambda_max=%.10g\n", res.spectrum.lambda_max);
    } else if (landscape->parsed()) {
      saq::RunLogger log = make_logger(landscape_args);
      const saq::LandscapeResult res =
          saq::cmd_landscape(make_config(landscape_args), log, landscape_args.checkpoint);
      std::printf("landscape center_loss=%.10g matrix=%s\n", res.grid.center_loss,
                  res.matrix_path.c_str());
    }
  } catch (const saq::InfeasibleError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const saq::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const saq::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const saq::Error& e) {
    // ConfigError, ValueError, ShapeError, FormatError: operator input is wrong.
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
