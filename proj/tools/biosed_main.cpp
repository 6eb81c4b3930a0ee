// biosed: synthesize labeled bioacoustic soundscapes, train CRNN
// sound-event-detection models, and evaluate per-second species presence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "biosed/commands.hpp"

namespace {

namespace fs = std::filesystem;
using biosed::config::ExperimentConfig;

struct GlobalFlags {
  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  int jobs = 1;
};

ExperimentConfig load(const GlobalFlags& g) {
  if (g.config_path.empty()) {
    throw biosed::ConfigError("--config: required");
  }
  auto cfg = biosed::config::load_config(g.config_path);
  // Precedence: flags > config file > defaults.
  if (g.seed_set) {
    cfg.seed = g.seed_override;
    cfg.train.seed = g.seed_override;
  }
  if (!g.out_override.empty()) cfg.out_dir = g.out_override;
  cfg.validate();
  return cfg;
}

std::vector<fs::path> to_paths(const std::vector<std::string>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bioacoustic soundscape synthesis + CRNN sound event "
               "detection"};
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--config", g.config_path, "experiment config file (json)");
  app.add_option("--seed", g.seed_override, "override the experiment seed")
      ->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out_override, "override the output root");
  app.add_option("--jobs", g.jobs, "worker threads for parallel stages");

  bool allow_network = false;
  auto* ingest = app.add_subcommand("ingest", "build pool manifests");
  ingest->add_flag("--allow-network", allow_network,
                   "query and download from the recordings archive");

  app.add_subcommand("synth", "synthesize the labeled soundscape dataset");
  app.add_subcommand("features", "precompute feature caches");

  std::string grid_expr;
  auto* train = app.add_subcommand("train", "train a model checkpoint");
  train->add_option("--grid", grid_expr,
                    "matrix run, e.g. "
                    "\"fill_density=10,50,max preset=sed_crnn,seldnet_sed\"");

  std::vector<std::string> audio_args;
  std::string checkpoint_arg;
  double threshold = -1.0;
  auto* predict = app.add_subcommand("predict",
                                     "per-second prediction timelines");
  predict->add_option("audio", audio_args, "recordings to predict")
      ->required();
  predict->add_option("--checkpoint", checkpoint_arg, "model checkpoint");
  predict->add_option("--threshold", threshold,
                      "binarization threshold for the flag column");

  std::vector<std::string> pred_args, truth_args;
  auto* eval_cmd = app.add_subcommand("eval", "segment metrics vs truth");
  eval_cmd->add_option("--pred", pred_args, "timeline csv files")->required();
  eval_cmd->add_option("--truth", truth_args, "label csv files")->required();
  eval_cmd->add_option("--threshold", threshold, "binarization threshold");

  auto* sweep_cmd = app.add_subcommand("sweep", "threshold sweep + peak");
  sweep_cmd->add_option("--pred", pred_args, "timeline csv files")
      ->required();
  sweep_cmd->add_option("--truth", truth_args, "label csv files")->required();

  std::vector<std::string> timeline_args;
  auto* report = app.add_subcommand("report", "static html timeline report");
  report->add_option("timelines", timeline_args, "timeline csv files")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load(g);
    if (app.got_subcommand("ingest")) {
      biosed::commands::run_ingest(cfg, allow_network, g.jobs);
    } else if (app.got_subcommand("synth")) {
      biosed::commands::run_synth(cfg, g.jobs);
    } else if (app.got_subcommand("features")) {
      biosed::commands::run_features(cfg, g.jobs);
    } else if (app.got_subcommand("train")) {
      if (grid_expr.empty()) {
        biosed::commands::run_train(cfg);
      } else {
        biosed::commands::run_grid(cfg, grid_expr, g.jobs);
      }
    } else if (app.got_subcommand("predict")) {
      const fs::path ckpt = checkpoint_arg.empty()
                                ? fs::path(cfg.out_dir) / "train" /
                                      "model.ckpt"
                                : fs::path(checkpoint_arg);
      const double tau =
          threshold >= 0.0 ? threshold : cfg.train.threshold_default;
      biosed::commands::run_predict(cfg, to_paths(audio_args), ckpt, tau);
    } else if (app.got_subcommand("eval")) {
      const double tau =
          threshold >= 0.0 ? threshold : cfg.train.threshold_default;
      biosed::commands::run_eval(cfg, to_paths(pred_args),
                                 to_paths(truth_args), tau);
    } else if (app.got_subcommand("sweep")) {
      biosed::commands::run_sweep(cfg, to_paths(pred_args),
                                  to_paths(truth_args));
    } else if (app.got_subcommand("report")) {
      biosed::commands::run_report(cfg, to_paths(timeline_args));
    }
  } catch (const biosed::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const biosed::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
