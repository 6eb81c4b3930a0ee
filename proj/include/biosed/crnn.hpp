#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "biosed/crnn_net.hpp"
#include "biosed/features.hpp"
#include "biosed/labelgrid.hpp"
#include "biosed/manifest.hpp"
#include "biosed/synth.hpp"

namespace biosed::crnn {

/// The three model configurations: (mel bands, window seconds) pairs are
/// fixed; layer sizes are defaults and can be overridden per experiment.
struct Preset {
  std::string name;
  int n_mels = 128;
  int window_s = 5;
  std::vector<ConvBlockDim> blocks;
  int gru_hidden = 64;
  int gru_layers = 1;
};

/// sed_crnn (40 mels, 5 s), adapted_sed_crnn (128 mels, 5 s),
/// seldnet_sed (128 mels, 32 s).
const std::vector<Preset>& presets();
const Preset& preset_by_name(const std::string& name);

/// Optional experiment-level overrides of the preset's layer sizes.
struct PresetOverrides {
  std::optional<int> conv_blocks;
  std::optional<int> conv_filters;
  std::optional<int> gru_hidden;
  std::optional<int> gru_layers;
};

Preset apply_overrides(Preset p, const PresetOverrides& o);

/// Frequency pool factors for a mel count: each factor divides the running
/// band count, ending at 1 or 2 bands.
std::vector<int> default_pools(int n_mels, int blocks);

ModelArch arch_from_preset(const Preset& p, int classes,
                           const features::FeatureConfig& fcfg);

struct TrainConfig {
  int batch_size = 4;
  int max_epochs = 300;
  int patience = 10;
  double min_delta = 1e-4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  double threshold_default = 0.5;

  void validate() const;
};

/// The checkpointable unit: weights plus everything prediction needs.
struct ModelParams {
  std::string preset_name;
  ModelArch arch;
  int window_s = 5;
  features::FeatureConfig fcfg;
  SpeciesList species;
  features::StandardizationStats stats;
  TensorStore<float> tensors;
  // Training provenance echoed into the checkpoint header.
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::uint64_t history_digest = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
  int best_epoch = -1;
  std::vector<std::string> train_recordings;
  std::vector<std::string> val_recordings;
};

/// Inference on one standardized window (running-stat batch norm).
MatF forward(ModelParams& params, const MatF& window_features);

/// Full training run over a synthesized dataset: recording-level train/val
/// split, per-epoch seeded shuffling, Adam updates, early stopping on
/// validation loss, parameters returned from the best-validation epoch.
TrainResult train(const synth::DatasetManifest& dataset,
                  const std::filesystem::path& dataset_dir,
                  const Preset& preset, const TrainConfig& cfg,
                  const SpeciesList& species,
                  const features::FeatureConfig& fcfg);

/// Per-second species probabilities for a whole recording at the canonical
/// rate: featurize, window, forward, then max-pool frame probabilities
/// within each second (padded frames excluded wherever a second has any
/// real frames).
MatF predict_recording(ModelParams& params, const audio::AudioClip& clip);

/// Checkpoint: header JSON (schema, preset, species, feature config, stats,
/// training digest, tensor manifest) followed by raw float32 LE tensor
/// blobs. Byte-exact round trip.
void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace biosed::crnn
