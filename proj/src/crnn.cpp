#include "biosed/crnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace biosed::crnn {

using nlohmann::json;

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table = {
      {"sed_crnn", 40, 5, {{64, 5}, {64, 4}, {64, 2}}, 64, 1},
      {"adapted_sed_crnn", 128, 5, {{64, 4}, {64, 4}, {64, 4}}, 64, 1},
      {"seldnet_sed", 128, 32, {{64, 4}, {64, 4}, {64, 4}}, 128, 2},
  };
  return table;
}

const Preset& preset_by_name(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("model.preset: unknown preset '" + name +
                    "' (expected sed_crnn, adapted_sed_crnn, seldnet_sed)");
}

std::vector<int> default_pools(int n_mels, int blocks) {
  // The two catalogued band counts use their canonical ladders; anything
  // else gets a greedy factorization.
  std::vector<int> pools;
  int q = n_mels;
  if (n_mels == 40 && blocks == 3) return {5, 4, 2};
  for (int b = 0; b < blocks; ++b) {
    int f = 1;
    for (int cand : {4, 5, 3, 2}) {
      if (q % cand == 0) {
        f = cand;
        break;
      }
    }
    pools.push_back(f);
    q /= f;
  }
  return pools;
}

Preset apply_overrides(Preset p, const PresetOverrides& o) {
  if (o.conv_blocks || o.conv_filters) {
    const int blocks =
        o.conv_blocks.value_or(static_cast<int>(p.blocks.size()));
    const int filters = o.conv_filters.value_or(p.blocks[0].filters);
    if (blocks < 1) throw ConfigError("model.conv_blocks: must be >= 1");
    const auto pools = default_pools(p.n_mels, blocks);
    p.blocks.clear();
    for (int b = 0; b < blocks; ++b) {
      p.blocks.push_back({filters, pools[static_cast<std::size_t>(b)]});
    }
  }
  if (o.gru_hidden) p.gru_hidden = *o.gru_hidden;
  if (o.gru_layers) p.gru_layers = *o.gru_layers;
  return p;
}

ModelArch arch_from_preset(const Preset& p, int classes,
                           const features::FeatureConfig& fcfg) {
  if (fcfg.n_mels != p.n_mels) {
    throw ConfigError("features.n_mels: preset '" + p.name + "' expects " +
                      std::to_string(p.n_mels) + " mel bands, config has " +
                      std::to_string(fcfg.n_mels));
  }
  ModelArch arch;
  arch.n_mels = p.n_mels;
  arch.frames = p.window_s * fcfg.fps();
  arch.classes = classes;
  arch.blocks = p.blocks;
  arch.gru_hidden = p.gru_hidden;
  arch.gru_layers = p.gru_layers;
  arch.validate();
  return arch;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (max_epochs < 1) throw ConfigError("train.max_epochs: must be >= 1");
  if (patience < 1) {
    throw ConfigError("train.patience: must be >= 1 (0 would stop before "
                      "any improvement can register)");
  }
  if (min_delta < 0) throw ConfigError("train.min_delta: must be >= 0");
  if (learning_rate <= 0) {
    throw ConfigError("train.learning_rate: must be > 0");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("train.val_fraction: must be in (0, 1)");
  }
}

MatF forward(ModelParams& params, const MatF& window_features) {
  BatchCache<float> cache;
  std::vector<const MatF*> inputs{&window_features};
  std::vector<const std::uint8_t*> masks{nullptr};
  net_forward(params.arch, params.tensors, inputs, masks, /*training=*/false,
              cache);
  return std::move(cache.windows[0].probs);
}

namespace {

struct LoadedRecording {
  std::string id;
  features::MelSpectrogram mel;
  labelgrid::LabelTrack track;
};

std::vector<LoadedRecording> load_dataset(
    const synth::DatasetManifest& dataset,
    const std::filesystem::path& dataset_dir, const SpeciesList& species,
    const features::FeatureConfig& fcfg) {
  std::vector<LoadedRecording> recs(dataset.entries.size());
  for (std::size_t i = 0; i < dataset.entries.size(); ++i) {
    const auto& e = dataset.entries[i];
    auto clip = audio::load_canonical(dataset_dir / e.audio_path);
    recs[i].id = e.audio_path;
    recs[i].mel = features::mel_spectrogram(clip, fcfg);
    recs[i].track = labelgrid::read_label_csv(dataset_dir / e.label_path,
                                              species,
                                              clip.duration_seconds());
  }
  return recs;
}

std::vector<features::InputWindow> windows_for_recording(
    const LoadedRecording& rec, const features::StandardizationStats& stats,
    const features::FeatureConfig& fcfg, int classes) {
  const MatF std_mel = features::standardize(rec.mel, stats);
  const MatU8 seg = labelgrid::to_segment_matrix(rec.track, classes);
  const MatU8 frame_labels =
      labelgrid::upsample_to_frames(seg, fcfg.fps(), std_mel.rows);
  return features::window_into_inputs(std_mel, frame_labels, fcfg, rec.id);
}

double evaluate_split(const ModelArch& arch, TensorStore<float>& tensors,
                      const std::vector<features::InputWindow>& windows,
                      const std::vector<std::size_t>& idx, int batch_size) {
  double loss_sum = 0.0;
  std::size_t cells = 0;
  for (std::size_t at = 0; at < idx.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t n =
        std::min(static_cast<std::size_t>(batch_size), idx.size() - at);
    std::vector<const MatF*> inputs(n);
    std::vector<const std::uint8_t*> masks(n);
    std::vector<const MatF*> probs(n);
    std::vector<const MatU8*> targets(n);
    BatchCache<float> cache;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& w = windows[idx[at + j]];
      inputs[j] = &w.features;
      masks[j] = w.valid.data();
      targets[j] = &w.targets;
    }
    net_forward(arch, tensors, inputs, masks, /*training=*/false, cache);
    for (std::size_t j = 0; j < n; ++j) probs[j] = &cache.windows[j].probs;
    const auto lg = bce_loss<float>(probs, targets, masks);
    loss_sum += lg.loss * static_cast<double>(lg.valid_cells);
    cells += lg.valid_cells;
  }
  return cells ? loss_sum / static_cast<double>(cells) : 0.0;
}

}  // namespace

TrainResult train(const synth::DatasetManifest& dataset,
                  const std::filesystem::path& dataset_dir,
                  const Preset& preset, const TrainConfig& cfg,
                  const SpeciesList& species,
                  const features::FeatureConfig& fcfg) {
  cfg.validate();
  species.validate();
  fcfg.validate();
  if (dataset.entries.size() < 2) {
    throw DataError("train: need at least 2 recordings for a train/val "
                    "split, got " + std::to_string(dataset.entries.size()));
  }
  features::FeatureConfig wcfg = fcfg;
  wcfg.segment_window_s = preset.window_s;
  const ModelArch arch = arch_from_preset(preset, species.count(), wcfg);

  const auto recs = load_dataset(dataset, dataset_dir, species, wcfg);

  // Recording-level split; every window of a recording stays on one side.
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(recs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(cfg.val_fraction * static_cast<double>(recs.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, recs.size() - 1);

  std::vector<std::size_t> val_recs(order.begin(),
                                    order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_recs(order.begin() + static_cast<long>(n_val),
                                      order.end());

  std::vector<const MatF*> train_mels;
  for (std::size_t r : train_recs) train_mels.push_back(&recs[r].mel.values);
  const auto stats = features::compute_stats(train_mels);

  std::vector<features::InputWindow> train_windows, val_windows;
  for (std::size_t r : train_recs) {
    auto ws = windows_for_recording(recs[r], stats, wcfg, arch.classes);
    for (auto& w : ws) train_windows.push_back(std::move(w));
  }
  for (std::size_t r : val_recs) {
    auto ws = windows_for_recording(recs[r], stats, wcfg, arch.classes);
    for (auto& w : ws) val_windows.push_back(std::move(w));
  }
  if (train_windows.empty() || val_windows.empty()) {
    throw DataError("train: a split ended up with zero windows");
  }

  TensorStore<float> params = init_params<float>(arch, cfg.seed);
  auto adam = make_adam_state(params);
  const AdamConfig acfg{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                        cfg.adam_eps};
  TensorStore<float> grads = params.zeros_like();

  TrainResult result;
  for (std::size_t r : train_recs) {
    result.train_recordings.push_back(recs[r].id);
  }
  for (std::size_t r : val_recs) result.val_recordings.push_back(recs[r].id);

  TensorStore<float> best_params = params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_since_improvement = 0;

  std::vector<std::size_t> train_idx(train_windows.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i) train_idx[i] = i;
  std::vector<std::size_t> val_idx(val_windows.size());
  for (std::size_t i = 0; i < val_idx.size(); ++i) val_idx[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    std::size_t cells = 0;
    for (std::size_t at = 0; at < train_idx.size();
         at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(
          static_cast<std::size_t>(cfg.batch_size), train_idx.size() - at);
      std::vector<const MatF*> inputs(n);
      std::vector<const std::uint8_t*> masks(n);
      std::vector<const MatU8*> targets(n);
      std::vector<const MatF*> probs(n);
      BatchCache<float> cache;
      for (std::size_t j = 0; j < n; ++j) {
        const auto& w = train_windows[train_idx[at + j]];
        inputs[j] = &w.features;
        masks[j] = w.valid.data();
        targets[j] = &w.targets;
      }
      net_forward(arch, params, inputs, masks, /*training=*/true, cache);
      for (std::size_t j = 0; j < n; ++j) probs[j] = &cache.windows[j].probs;
      auto lg = bce_loss<float>(probs, targets, masks);
      if (!std::isfinite(lg.loss)) {
        throw std::runtime_error(
            "train: loss diverged (non-finite) at epoch " +
            std::to_string(epoch));
      }
      loss_sum += lg.loss * static_cast<double>(lg.valid_cells);
      cells += lg.valid_cells;
      net_backward(arch, params, cache, lg.dprobs, grads);
      adam_update(params, grads, adam, acfg);
    }
    EpochStats es;
    es.train_loss = cells ? loss_sum / static_cast<double>(cells) : 0.0;
    es.val_loss =
        evaluate_split(arch, params, val_windows, val_idx, cfg.batch_size);
    if (!std::isfinite(es.val_loss)) {
      throw std::runtime_error(
          "train: validation loss diverged (non-finite) at epoch " +
          std::to_string(epoch));
    }
    result.history.push_back(es);

    if (es.val_loss < best_val - cfg.min_delta) {
      best_val = es.val_loss;
      best_epoch = epoch;
      best_params = params;
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
      if (epochs_since_improvement >= cfg.patience) break;
    }
  }
  if (best_epoch < 0) {
    // Validation never improved on +inf; keep the last state.
    best_params = params;
    best_epoch = static_cast<int>(result.history.size()) - 1;
    best_val = result.history.empty() ? 0.0
                                      : result.history.back().val_loss;
  }

  result.best_epoch = best_epoch;
  result.params.preset_name = preset.name;
  result.params.arch = arch;
  result.params.window_s = preset.window_s;
  result.params.fcfg = wcfg;
  result.params.species = species;
  result.params.stats = stats;
  result.params.tensors = std::move(best_params);
  result.params.epochs_run = static_cast<int>(result.history.size());
  result.params.best_epoch = best_epoch;
  result.params.best_val_loss = best_val;
  std::uint64_t digest = kFnvOffsetBasis;
  for (const auto& es : result.history) {
    digest = fnv1a64(&es.train_loss, sizeof es.train_loss, digest);
    digest = fnv1a64(&es.val_loss, sizeof es.val_loss, digest);
  }
  result.params.history_digest = digest;
  return result;
}

MatF predict_recording(ModelParams& params, const audio::AudioClip& clip) {
  audio::AudioClip canonical = clip;
  if (canonical.sample_rate != params.fcfg.sample_rate) {
    canonical = audio::resample(canonical, params.fcfg.sample_rate);
  }
  if (canonical.samples.empty()) {
    throw DataError("predict: clip too short (no samples)");
  }
  const auto mel = features::mel_spectrogram(canonical, params.fcfg);
  const MatF std_mel = features::standardize(mel, params.stats);
  const auto classes = static_cast<std::size_t>(params.arch.classes);
  const MatU8 dummy_labels(std_mel.rows, classes, 0);
  auto windows = features::window_into_inputs(std_mel, dummy_labels,
                                              params.fcfg, clip.source_id);

  const std::size_t win_frames =
      static_cast<std::size_t>(params.arch.frames);
  const std::size_t total_forwarded = windows.size() * win_frames;
  MatF frame_probs(total_forwarded, classes);
  constexpr std::size_t kInferBatch = 4;
  for (std::size_t at = 0; at < windows.size(); at += kInferBatch) {
    const std::size_t n = std::min(kInferBatch, windows.size() - at);
    std::vector<const MatF*> inputs(n);
    std::vector<const std::uint8_t*> masks(n);
    BatchCache<float> cache;
    for (std::size_t j = 0; j < n; ++j) {
      inputs[j] = &windows[at + j].features;
      masks[j] = windows[at + j].valid.data();
    }
    net_forward(params.arch, params.tensors, inputs, masks,
                /*training=*/false, cache);
    for (std::size_t j = 0; j < n; ++j) {
      std::copy(cache.windows[j].probs.data.begin(),
                cache.windows[j].probs.data.end(),
                frame_probs.row((at + j) * win_frames));
    }
  }

  const std::size_t real_frames = std_mel.rows;
  const auto fps = static_cast<std::size_t>(params.fcfg.fps());
  const auto t_end = static_cast<std::size_t>(
      std::ceil(canonical.duration_seconds()));
  MatF out(t_end, classes, 0.0f);
  for (std::size_t t = 0; t < t_end; ++t) {
    const std::size_t lo = t * fps;
    // Real STFT frames when the second has any; otherwise fall back to the
    // zero-padded tail of the last window (and failing that, the previous
    // second), so the matrix always has ceil(duration) rows.
    std::size_t hi = std::min((t + 1) * fps, real_frames);
    std::size_t use_lo = lo, use_hi = hi;
    if (use_lo >= use_hi) {
      use_hi = std::min((t + 1) * fps, total_forwarded);
      if (use_lo >= use_hi) {
        std::copy(out.row(t - 1), out.row(t - 1) + classes, out.row(t));
        continue;
      }
    }
    for (std::size_t c = 0; c < classes; ++c) {
      float best = frame_probs(use_lo, c);
      for (std::size_t f = use_lo + 1; f < use_hi; ++f) {
        best = std::max(best, frame_probs(f, c));
      }
      out(t, c) = best;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'B', 'S', 'E', 'D', 'C', 'K', 'P', '1'};

json fcfg_to_json(const features::FeatureConfig& f) {
  json j;
  j["fft_size"] = f.fft_size;
  j["hop"] = f.hop;
  j["n_mels"] = f.n_mels;
  j["fmin"] = f.fmin;
  j["fmax"] = f.fmax;
  j["sample_rate"] = f.sample_rate;
  j["db_floor"] = f.db_floor;
  j["segment_window_s"] = f.segment_window_s;
  return j;
}

features::FeatureConfig fcfg_from_json(const json& j) {
  features::FeatureConfig f;
  f.fft_size = j.at("fft_size").get<int>();
  f.hop = j.at("hop").get<int>();
  f.n_mels = j.at("n_mels").get<int>();
  f.fmin = j.at("fmin").get<double>();
  f.fmax = j.at("fmax").get<double>();
  f.sample_rate = j.at("sample_rate").get<int>();
  f.db_floor = j.at("db_floor").get<double>();
  f.segment_window_s = j.at("segment_window_s").get<int>();
  return f;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params) {
  json header;
  header["schema_version"] = 1;
  header["preset"] = params.preset_name;
  header["window_s"] = params.window_s;
  json arch;
  arch["n_mels"] = params.arch.n_mels;
  arch["frames"] = params.arch.frames;
  arch["classes"] = params.arch.classes;
  arch["gru_hidden"] = params.arch.gru_hidden;
  arch["gru_layers"] = params.arch.gru_layers;
  json blocks = json::array();
  for (const auto& b : params.arch.blocks) {
    blocks.push_back({{"filters", b.filters}, {"freq_pool", b.freq_pool}});
  }
  arch["blocks"] = blocks;
  header["arch"] = arch;
  json species = json::array();
  for (const auto& sp : params.species.entries) {
    species.push_back({{"common_name", sp.common_name},
                       {"latin_name", sp.latin_name}});
  }
  header["species"] = species;
  header["features"] = fcfg_to_json(params.fcfg);
  header["stats"] = {{"mean", params.stats.mean},
                     {"stddev", params.stats.stddev}};
  header["training"] = {{"epochs_run", params.epochs_run},
                        {"best_epoch", params.best_epoch},
                        {"best_val_loss", params.best_val_loss},
                        {"history_digest", to_hex(params.history_digest)}};
  json tensors = json::array();
  for (const auto& e : params.tensors.entries) {
    tensors.push_back({{"name", e.name},
                       {"shape", e.shape},
                       {"trainable", e.trainable}});
  }
  header["tensors"] = tensors;

  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out.write(kCkptMagic, 8);
  const auto head_len = static_cast<std::uint32_t>(head.size());
  out.write(reinterpret_cast<const char*>(&head_len), 4);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& e : params.tensors.entries) {
    out.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  }
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  char magic[8];
  std::uint32_t head_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&head_len), 4);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw DataError("checkpoint: bad magic in " + path.string());
  }
  std::string head(head_len, '\0');
  in.read(head.data(), head_len);
  if (!in) throw DataError("checkpoint: truncated header in " + path.string());
  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad header json: ") + e.what());
  }
  if (header.value("schema_version", 0) != 1) {
    throw DataError("checkpoint: unsupported schema_version");
  }

  ModelParams params;
  params.preset_name = header.at("preset").get<std::string>();
  params.window_s = header.at("window_s").get<int>();
  const json& arch = header.at("arch");
  params.arch.n_mels = arch.at("n_mels").get<int>();
  params.arch.frames = arch.at("frames").get<int>();
  params.arch.classes = arch.at("classes").get<int>();
  params.arch.gru_hidden = arch.at("gru_hidden").get<int>();
  params.arch.gru_layers = arch.at("gru_layers").get<int>();
  for (const auto& b : arch.at("blocks")) {
    params.arch.blocks.push_back(
        {b.at("filters").get<int>(), b.at("freq_pool").get<int>()});
  }
  for (const auto& sp : header.at("species")) {
    params.species.entries.push_back(
        {sp.at("common_name").get<std::string>(),
         sp.value("latin_name", std::string{})});
  }
  params.fcfg = fcfg_from_json(header.at("features"));
  params.stats.mean =
      header.at("stats").at("mean").get<std::vector<double>>();
  params.stats.stddev =
      header.at("stats").at("stddev").get<std::vector<double>>();
  const json& training = header.at("training");
  params.epochs_run = training.at("epochs_run").get<int>();
  params.best_epoch = training.at("best_epoch").get<int>();
  params.best_val_loss = training.at("best_val_loss").get<double>();
  params.history_digest =
      std::stoull(training.at("history_digest").get<std::string>(), nullptr,
                  16);

  for (const auto& t : header.at("tensors")) {
    auto& data = params.tensors.add(
        t.at("name").get<std::string>(),
        t.at("shape").get<std::vector<std::size_t>>(),
        t.at("trainable").get<bool>());
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) {
      throw DataError("checkpoint: truncated tensor data in " +
                      path.string());
    }
  }
  return params;
}

}  // namespace biosed::crnn
