#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "biosed/crnn.hpp"
#include "biosed/features.hpp"
#include "biosed/manifest.hpp"
#include "biosed/synth.hpp"

namespace biosed::config {

inline constexpr const char* kToolVersion = "biosed 0.1.0";

/// One experiment file drives the whole pipeline; flags override individual
/// fields, defaults fill the rest (precedence: flags > config > defaults).
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";

  SpeciesList species;
  std::string labeled_dir;
  std::string background_dir;
  std::string archive_base_url;
  std::set<Quality> archive_quality = {Quality::A, Quality::B, Quality::C,
                                       Quality::D, Quality::E};

  std::int64_t fill_density = 50;  // synth::kMaxFillDensity for "max"
  synth::GainMode gain_mode;

  features::FeatureConfig features;

  std::string preset_name = "adapted_sed_crnn";
  crnn::PresetOverrides overrides;

  crnn::TrainConfig train;

  std::vector<double> eval_thresholds = {0.5};
  int sweep_points = 101;

  void validate() const;

  synth::SynthesisConfig synthesis_config() const;
  crnn::Preset preset() const;
};

ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path,
                 const ExperimentConfig& cfg);

/// Digest of the canonical serialized form; identical configs hash equal
/// regardless of the source file's formatting.
std::uint64_t config_digest(const ExperimentConfig& cfg);

/// Provenance record dropped in every command's output directory.
void write_run_record(const std::filesystem::path& dir,
                      const ExperimentConfig& cfg, const std::string& command,
                      const std::vector<std::filesystem::path>& inputs);

}  // namespace biosed::config
