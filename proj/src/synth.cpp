#include "biosed/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace biosed::synth {

using nlohmann::json;

void SynthesisConfig::validate() const {
  if (fill_density != kMaxFillDensity && fill_density < 1) {
    throw ConfigError("synthesis.fill_density: must be >= 1 or \"max\"");
  }
  if (gain_mode.kind == GainMode::Kind::peak_norm_uniform &&
      !(gain_mode.lo > 0.0 && gain_mode.lo <= gain_mode.hi &&
        gain_mode.hi <= 1.0)) {
    throw ConfigError("synthesis.gain: need 0 < lo <= hi <= 1");
  }
  species.validate();
}

std::size_t entry_samples(const PoolEntry& entry) {
  const double scaled = entry.duration_s * audio::kCanonicalRate;
  return scaled <= 0.0 ? 0 : static_cast<std::size_t>(scaled + 0.5);
}

namespace {

Placement draw_placement(const PoolManifest& pool, std::size_t pool_index,
                         std::size_t bg_len, const SynthesisConfig& cfg,
                         Rng& rng) {
  Placement p;
  p.pool_index = pool_index;
  p.species_id = pool.entries[pool_index].species_id;
  const std::size_t snip_len = entry_samples(pool.entries[pool_index]);
  p.trimmed_len_samples = std::min(snip_len, bg_len);
  p.start_sample = rng.uniform_index(bg_len - p.trimmed_len_samples + 1);
  p.gain = cfg.gain_mode.kind == GainMode::Kind::peak_norm_uniform
               ? rng.uniform(cfg.gain_mode.lo, cfg.gain_mode.hi)
               : 1.0;
  return p;
}

}  // namespace

EmbeddingPlan plan_embeddings_subset(const PoolManifest& pool,
                                     const std::vector<std::size_t>& eligible,
                                     std::size_t background_len_samples,
                                     const SynthesisConfig& cfg) {
  cfg.validate();
  if (background_len_samples == 0) {
    throw DataError("synth: zero-length background");
  }
  EmbeddingPlan plan;
  plan.seed_echo = cfg.seed;
  plan.gain_mode = cfg.gain_mode;
  Rng rng(cfg.seed);

  if (cfg.fill_density == kMaxFillDensity) {
    // Every eligible entry placed exactly once; species counts follow the
    // pool's own (possibly imbalanced) distribution.
    for (std::size_t idx : eligible) {
      if (entry_samples(pool.entries[idx]) == 0) continue;
      plan.placements.push_back(
          draw_placement(pool, idx, background_len_samples, cfg, rng));
    }
    return plan;
  }

  const int n_species = cfg.species.count();
  std::vector<std::vector<std::size_t>> by_species(
      static_cast<std::size_t>(n_species));
  for (std::size_t idx : eligible) {
    const PoolEntry& e = pool.entries[idx];
    if (e.species_id < 0 || e.species_id >= n_species) continue;
    if (entry_samples(e) == 0 || e.failed) continue;
    by_species[static_cast<std::size_t>(e.species_id)].push_back(idx);
  }
  for (int sp = 0; sp < n_species; ++sp) {
    if (by_species[static_cast<std::size_t>(sp)].empty()) {
      throw DataError("synth: no usable pool entries for species '" +
                      cfg.species.entries[static_cast<std::size_t>(sp)]
                          .common_name +
                      "' (id " + std::to_string(sp) + ")");
    }
  }
  // Round-robin over species ids keeps per-species counts within one of
  // each other for any density.
  for (std::int64_t k = 0; k < cfg.fill_density; ++k) {
    const auto& candidates =
        by_species[static_cast<std::size_t>(k % n_species)];
    const std::size_t idx = candidates[rng.uniform_index(candidates.size())];
    plan.placements.push_back(
        draw_placement(pool, idx, background_len_samples, cfg, rng));
  }
  return plan;
}

EmbeddingPlan plan_embeddings(const PoolManifest& pool,
                              std::size_t background_len_samples,
                              const SynthesisConfig& cfg) {
  std::vector<std::size_t> all(pool.entries.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return plan_embeddings_subset(pool, all, background_len_samples, cfg);
}

double resolve_gain(const GainMode& mode, double drawn_gain,
                    const AudioClip& snippet, const AudioClip& background,
                    const Placement& placement) {
  const std::size_t n = placement.trimmed_len_samples;
  switch (mode.kind) {
    case GainMode::Kind::raw_add:
      return drawn_gain;
    case GainMode::Kind::peak_norm_uniform: {
      float peak = 0.0f;
      for (std::size_t i = 0; i < n; ++i) {
        peak = std::max(peak, std::abs(snippet.samples[i]));
      }
      return peak > 0.0f ? drawn_gain * 0.9 / peak : 0.0;
    }
    case GainMode::Kind::target_snr_db: {
      double p_snip = 0.0, p_bg = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        p_snip += static_cast<double>(snippet.samples[i]) *
                  snippet.samples[i];
        const float b = background.samples[placement.start_sample + i];
        p_bg += static_cast<double>(b) * b;
      }
      if (p_snip <= 0.0) return 0.0;
      return std::sqrt(std::pow(10.0, mode.snr_db / 10.0) *
                       std::max(p_bg, 1e-12) / p_snip);
    }
  }
  return drawn_gain;
}

std::pair<AudioClip, LabelTrack> render_mixture(
    const AudioClip& background, const EmbeddingPlan& plan,
    const std::vector<AudioClip>& pool_clips) {
  AudioClip out;
  out.sample_rate = background.sample_rate;
  out.source_id = background.source_id;
  out.samples = background.samples;

  LabelTrack track;
  track.recording_duration_s = background.duration_seconds();

  const double rate = background.sample_rate;
  for (const Placement& p : plan.placements) {
    if (p.pool_index >= pool_clips.size()) {
      throw DataError("synth: plan references pool entry " +
                      std::to_string(p.pool_index) + " beyond loaded pool");
    }
    const AudioClip& snippet = pool_clips[p.pool_index];
    if (p.start_sample + p.trimmed_len_samples > out.samples.size() ||
        p.trimmed_len_samples > snippet.samples.size()) {
      throw DataError("synth: placement out of range (corrupted plan for " +
                      plan.background_ref + ")");
    }
    const float g = static_cast<float>(
        resolve_gain(plan.gain_mode, p.gain, snippet, background, p));
    float* dst = out.samples.data() + p.start_sample;
    const float* src = snippet.samples.data();
    for (std::size_t i = 0; i < p.trimmed_len_samples; ++i) {
      dst[i] += g * src[i];
    }
    track.events.push_back(
        {p.species_id, static_cast<double>(p.start_sample) / rate,
         static_cast<double>(p.start_sample + p.trimmed_len_samples) / rate});
  }
  audio::clamp_amplitude(out.samples);
  return {std::move(out), std::move(track)};
}

namespace {

std::string background_stem(const PoolEntry& e) {
  return std::filesystem::path(e.source_ref).stem().string();
}

}  // namespace

DatasetManifest synth_dataset(const PoolManifest& backgrounds,
                              const PoolManifest& pool,
                              const SynthesisConfig& cfg,
                              const std::filesystem::path& out_dir,
                              int jobs) {
  cfg.validate();
  if (backgrounds.entries.empty()) {
    throw DataError("synth: background pool is empty");
  }
  if (pool.entries.empty() && cfg.fill_density != 0) {
    throw DataError("synth: labeled pool is empty");
  }
  std::filesystem::create_directories(out_dir);

  std::vector<AudioClip> pool_clips(pool.entries.size());
  parallel_for(pool.entries.size(), jobs, [&](std::size_t i) {
    pool_clips[i] = audio::load_canonical(pool.entries[i].local_path);
  });

  const std::size_t n_bg = backgrounds.entries.size();
  // MAX density: partition the pool round-robin across backgrounds so the
  // dataset embeds every entry exactly once in total.
  std::vector<std::vector<std::size_t>> subsets(n_bg);
  if (cfg.fill_density == kMaxFillDensity) {
    for (std::size_t i = 0; i < pool.entries.size(); ++i) {
      subsets[i % n_bg].push_back(i);
    }
  } else {
    std::vector<std::size_t> all(pool.entries.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (auto& s : subsets) s = all;
  }

  DatasetManifest manifest;
  manifest.entries.resize(n_bg);
  parallel_for(n_bg, jobs, [&](std::size_t b) {
    const PoolEntry& bg_entry = backgrounds.entries[b];
    AudioClip bg = audio::load_canonical(bg_entry.local_path);
    SynthesisConfig file_cfg = cfg;
    file_cfg.seed = cfg.seed ^ fnv1a64(bg_entry.source_ref);
    EmbeddingPlan plan =
        plan_embeddings_subset(pool, subsets[b], bg.samples.size(), file_cfg);
    plan.background_ref = bg_entry.source_ref;
    auto [mixture, track] = render_mixture(bg, plan, pool_clips);

    const std::string stem = background_stem(bg_entry);
    const std::string wav_name = stem + "_synth.wav";
    const std::string csv_name = stem + "_labels.csv";
    audio::write_wav_file(out_dir / wav_name, mixture);
    labelgrid::write_label_csv(out_dir / csv_name, track, cfg.species);
    manifest.entries[b] = {wav_name, csv_name, mixture.duration_seconds()};
  });

  write_dataset_manifest(out_dir / "dataset_manifest.jsonl", manifest);
  return manifest;
}

void write_dataset_manifest(const std::filesystem::path& path,
                            const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("dataset: cannot write " + path.string());
  json header;
  header["schema_version"] = 1;
  header["kind"] = "dataset";
  out << header.dump() << "\n";
  for (const auto& e : manifest.entries) {
    json j;
    j["audio"] = e.audio_path;
    j["labels"] = e.label_path;
    j["duration_s"] = e.duration_s;
    out << j.dump() << "\n";
  }
}

DatasetManifest read_dataset_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset: empty manifest");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset: bad header: ") + e.what());
  }
  if (header.value("schema_version", 0) != 1 ||
      header.value("kind", "") != std::string("dataset")) {
    throw DataError("dataset: unrecognized manifest header");
  }
  DatasetManifest manifest;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("dataset: bad entry: ") + e.what());
    }
    manifest.entries.push_back({j.at("audio").get<std::string>(),
                                j.at("labels").get<std::string>(),
                                j.at("duration_s").get<double>()});
  }
  return manifest;
}

}  // namespace biosed::synth
