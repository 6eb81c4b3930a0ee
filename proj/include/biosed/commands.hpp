#pragma once

// Pipeline verbs behind the CLI subcommands. They live in the library so
// the test suites can drive every command end to end without spawning
// processes.

#include <filesystem>
#include <string>
#include <vector>

#include "biosed/config.hpp"
#include "biosed/eval.hpp"

namespace biosed::commands {

struct IngestResult {
  std::filesystem::path labeled_manifest;
  std::filesystem::path background_manifest;
};

/// Builds (or refreshes) the labeled and background pool manifests. Offline
/// directory scans by default; the archive client runs only when
/// allow_network is set and a base URL is configured.
IngestResult run_ingest(const config::ExperimentConfig& cfg,
                        bool allow_network, int jobs);

/// Synthesizes the labeled soundscape dataset under <out>/synth.
std::filesystem::path run_synth(const config::ExperimentConfig& cfg,
                                int jobs);

/// Precomputes feature caches for every dataset recording under
/// <out>/features.
std::filesystem::path run_features(const config::ExperimentConfig& cfg,
                                   int jobs);

struct TrainOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path history_csv;
  crnn::TrainResult result;
};

TrainOutput run_train(const config::ExperimentConfig& cfg);

/// Grid helper: "fill_density=10,50,max preset=sed_crnn,adapted_sed_crnn".
/// Synthesizes one dataset per density, trains per (preset, density), and
/// tabulates threshold-0.5 validation metrics in grid_results.csv.
std::filesystem::path run_grid(const config::ExperimentConfig& cfg,
                               const std::string& grid_expr, int jobs);

/// Per-second prediction timelines for the given recordings.
std::vector<std::filesystem::path> run_predict(
    const config::ExperimentConfig& cfg,
    const std::vector<std::filesystem::path>& audio,
    const std::filesystem::path& checkpoint, double threshold);

struct EvalOutput {
  std::filesystem::path csv;
  std::filesystem::path json;
  eval::RecordingEval aggregate;
};

/// Aggregated (micro) metrics over (timeline, truth-label) file pairs.
EvalOutput run_eval(const config::ExperimentConfig& cfg,
                    const std::vector<std::filesystem::path>& timelines,
                    const std::vector<std::filesystem::path>& truths,
                    double threshold);

struct SweepOutput {
  std::filesystem::path csv;
  double best_f1 = 0.0;
  double best_threshold = 0.0;
};

/// Threshold sweep over the pooled matrices; prints the peak line
/// "best F1 <v> at threshold <tau>".
SweepOutput run_sweep(const config::ExperimentConfig& cfg,
                      const std::vector<std::filesystem::path>& timelines,
                      const std::vector<std::filesystem::path>& truths);

/// Static HTML heat table plus a merged CSV export of the timelines.
std::filesystem::path run_report(
    const config::ExperimentConfig& cfg,
    const std::vector<std::filesystem::path>& timelines);

// Timeline files: t_start_s,t_end_s,<species>_prob,<species>_flag,...
void write_timeline_csv(const std::filesystem::path& path, const MatF& probs,
                        const SpeciesList& species, double threshold);
MatF read_timeline_csv(const std::filesystem::path& path,
                       const SpeciesList& species);

}  // namespace biosed::commands
