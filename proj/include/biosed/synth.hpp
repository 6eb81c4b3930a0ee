#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biosed/audio.hpp"
#include "biosed/labelgrid.hpp"
#include "biosed/manifest.hpp"

namespace biosed::synth {

using audio::AudioClip;
using labelgrid::LabelTrack;

/// Sentinel for "embed the entire pool" (the max fill density setting).
inline constexpr std::int64_t kMaxFillDensity = -1;

struct GainMode {
  enum class Kind { raw_add, peak_norm_uniform, target_snr_db };
  Kind kind = Kind::peak_norm_uniform;
  // peak_norm_uniform: snippet peak-normalized to 0.9, then scaled by a
  // uniform draw in [lo, hi].
  double lo = 0.25;
  double hi = 1.0;
  // target_snr_db: snippet scaled so its energy sits snr_db above the
  // background energy under the placement.
  double snr_db = 0.0;
};

struct SynthesisConfig {
  std::int64_t fill_density = 50;  // snippets per background file, or MAX
  SpeciesList species;
  std::uint64_t seed = 0;
  GainMode gain_mode;

  void validate() const;
};

struct Placement {
  std::size_t pool_index = 0;  // index into the full pool manifest
  int species_id = 0;
  std::size_t start_sample = 0;
  double gain = 1.0;  // drawn scale; interpreted per gain mode at render
  std::size_t trimmed_len_samples = 0;
};

struct EmbeddingPlan {
  std::vector<Placement> placements;
  std::string background_ref;
  std::uint64_t seed_echo = 0;
  GainMode gain_mode;  // echoed so the plan renders without extra context
};

/// Draws the placements for one background. Deterministic function of
/// (pool manifest, background length, cfg.seed). Non-MAX density picks
/// species round-robin so per-species counts differ pairwise by at most one
/// and snippets uniformly within each species; MAX places every eligible
/// pool entry exactly once. Snippets longer than the background are trimmed
/// to its full length.
EmbeddingPlan plan_embeddings(const PoolManifest& pool,
                              std::size_t background_len_samples,
                              const SynthesisConfig& cfg);

/// Subset-aware variant used for MAX-density datasets, where the pool is
/// partitioned across backgrounds; `eligible` holds full-pool entry indices.
EmbeddingPlan plan_embeddings_subset(const PoolManifest& pool,
                                     const std::vector<std::size_t>& eligible,
                                     std::size_t background_len_samples,
                                     const SynthesisConfig& cfg);

/// background + sum of scaled snippets at their start samples, hard-clamped
/// to [-1, 1], plus the label track generated from the placements (event
/// order = placement order).
std::pair<AudioClip, LabelTrack> render_mixture(
    const AudioClip& background, const EmbeddingPlan& plan,
    const std::vector<AudioClip>& pool_clips);

/// The effective multiplier render_mixture applies to a snippet; exposed so
/// tests can verify mixtures by independent subtraction.
double resolve_gain(const GainMode& mode, double drawn_gain,
                    const AudioClip& snippet, const AudioClip& background,
                    const Placement& placement);

struct DatasetEntry {
  std::string audio_path;  // relative to the manifest directory
  std::string label_path;
  double duration_s = 0.0;
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;
};

/// Plans and renders every background: `<stem>_synth.wav` +
/// `<stem>_labels.csv` per file plus `dataset_manifest.jsonl`. Each file's
/// plan is seeded with cfg.seed xor fnv1a64(background source_ref), so
/// results are independent of render order; `jobs` parallelizes rendering.
/// Fully deterministic for a fixed cfg.seed. Any per-file failure aborts
/// the run (datasets must be complete).
DatasetManifest synth_dataset(const PoolManifest& backgrounds,
                              const PoolManifest& pool,
                              const SynthesisConfig& cfg,
                              const std::filesystem::path& out_dir,
                              int jobs = 1);

void write_dataset_manifest(const std::filesystem::path& path,
                            const DatasetManifest& manifest);
DatasetManifest read_dataset_manifest(const std::filesystem::path& path);

/// Snippet length in canonical-rate samples as planning sees it.
std::size_t entry_samples(const PoolEntry& entry);

}  // namespace biosed::synth
