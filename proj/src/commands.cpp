#include "biosed/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "biosed/archive.hpp"
#include "biosed/labelgrid.hpp"

namespace biosed::commands {

namespace fs = std::filesystem;
using config::ExperimentConfig;

namespace {

fs::path ensure_dir(const fs::path& p) {
  fs::create_directories(p);
  return p;
}

synth::DatasetManifest require_dataset(const ExperimentConfig& cfg,
                                       fs::path* dataset_dir) {
  *dataset_dir = fs::path(cfg.out_dir) / "synth";
  const fs::path manifest = *dataset_dir / "dataset_manifest.jsonl";
  if (!fs::exists(manifest)) {
    throw DataError("no dataset manifest at " + manifest.string() +
                    "; run `biosed synth` first");
  }
  return synth::read_dataset_manifest(manifest);
}

PoolManifest labeled_manifest_for(const ExperimentConfig& cfg) {
  const fs::path ingested =
      fs::path(cfg.out_dir) / "ingest" / "pool_labeled.jsonl";
  if (fs::exists(ingested)) return read_pool_manifest(ingested);
  if (cfg.labeled_dir.empty()) {
    throw ConfigError("pools.labeled_dir: not set and no ingested manifest "
                      "found; run `biosed ingest` or set the directory");
  }
  return build_pool_manifest(cfg.labeled_dir, cfg.species,
                             PoolKind::labeled_snippets);
}

PoolManifest background_manifest_for(const ExperimentConfig& cfg) {
  const fs::path ingested =
      fs::path(cfg.out_dir) / "ingest" / "pool_background.jsonl";
  if (fs::exists(ingested)) return read_pool_manifest(ingested);
  if (cfg.background_dir.empty()) {
    throw ConfigError("pools.background_dir: not set and no ingested "
                      "manifest found; run `biosed ingest` or set the "
                      "directory");
  }
  return build_pool_manifest(cfg.background_dir, cfg.species,
                             PoolKind::backgrounds);
}

}  // namespace

IngestResult run_ingest(const ExperimentConfig& cfg, bool allow_network,
                        int jobs) {
  cfg.validate();
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "ingest");
  IngestResult out;
  out.labeled_manifest = dir / "pool_labeled.jsonl";
  out.background_manifest = dir / "pool_background.jsonl";

  PoolManifest labeled;
  if (allow_network && !cfg.archive_base_url.empty()) {
    archive::ArchiveClient client(cfg.archive_base_url);
    std::vector<archive::RemoteEntry> descriptors;
    for (const auto& sp : cfg.species.entries) {
      auto batch = client.query(sp.common_name, cfg.archive_quality);
      descriptors.insert(descriptors.end(), batch.begin(), batch.end());
    }
    labeled = archive::download_pool(client, descriptors, cfg.species,
                                     dir / "labeled_pool", jobs);
  } else {
    if (cfg.labeled_dir.empty()) {
      throw ConfigError(
          "pools.labeled_dir: required for offline ingest (or pass "
          "--allow-network with pools.archive.base_url set)");
    }
    labeled = build_pool_manifest(cfg.labeled_dir, cfg.species,
                                  PoolKind::labeled_snippets);
  }
  write_pool_manifest(out.labeled_manifest, labeled);

  if (cfg.background_dir.empty()) {
    throw ConfigError("pools.background_dir: required");
  }
  const auto backgrounds = build_pool_manifest(
      cfg.background_dir, cfg.species, PoolKind::backgrounds);
  write_pool_manifest(out.background_manifest, backgrounds);

  config::write_run_record(dir, cfg, "ingest", {});
  std::cout << "ingest: " << labeled.entries.size() << " labeled, "
            << backgrounds.entries.size() << " background entries\n";
  return out;
}

fs::path run_synth(const ExperimentConfig& cfg, int jobs) {
  cfg.validate();
  const auto pool = labeled_manifest_for(cfg);
  const auto backgrounds = background_manifest_for(cfg);
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "synth");
  const auto manifest =
      synth::synth_dataset(backgrounds, pool, cfg.synthesis_config(), dir,
                           jobs);
  config::write_run_record(dir, cfg, "synth", {});
  std::cout << "synth: " << manifest.entries.size()
            << " soundscapes in " << dir.string() << "\n";
  return dir;
}

fs::path run_features(const ExperimentConfig& cfg, int jobs) {
  cfg.validate();
  fs::path dataset_dir;
  const auto dataset = require_dataset(cfg, &dataset_dir);
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "features");
  parallel_for(dataset.entries.size(), jobs, [&](std::size_t i) {
    const auto& entry = dataset.entries[i];
    const auto clip = audio::load_canonical(dataset_dir / entry.audio_path);
    const auto mel = features::mel_spectrogram(clip, cfg.features);
    const fs::path cache =
        dir / (fs::path(entry.audio_path).stem().string() + ".melcache");
    features::write_feature_cache(cache, mel);
  });
  config::write_run_record(dir, cfg, "features",
                           {dataset_dir / "dataset_manifest.jsonl"});
  std::cout << "features: cached " << dataset.entries.size()
            << " recordings in " << dir.string() << "\n";
  return dir;
}

namespace {

void write_history_csv(const fs::path& path,
                       const std::vector<crnn::EpochStats>& history) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("train: cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.8f,%.8f\n", i,
                  history[i].train_loss, history[i].val_loss);
    out << buf;
  }
}

}  // namespace

TrainOutput run_train(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::path dataset_dir;
  const auto dataset = require_dataset(cfg, &dataset_dir);
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "train");

  auto result = crnn::train(dataset, dataset_dir, cfg.preset(), cfg.train,
                            cfg.species, cfg.features);

  TrainOutput out;
  out.checkpoint = dir / "model.ckpt";
  out.history_csv = dir / "history.csv";
  crnn::save_checkpoint(out.checkpoint, result.params);
  write_history_csv(out.history_csv, result.history);
  config::write_run_record(dir, cfg, "train",
                           {dataset_dir / "dataset_manifest.jsonl"});
  std::cout << "train: " << result.history.size() << " epochs, best epoch "
            << result.best_epoch << " (val loss "
            << result.params.best_val_loss << ") -> "
            << out.checkpoint.string() << "\n";
  out.result = std::move(result);
  return out;
}

namespace {

struct GridAxes {
  std::vector<std::string> presets;
  std::vector<std::int64_t> densities;  // kMaxFillDensity for "max"
};

GridAxes parse_grid(const std::string& expr,
                    const ExperimentConfig& cfg) {
  GridAxes axes;
  std::istringstream in(expr);
  std::string term;
  while (in >> term) {
    const auto eq = term.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("train.grid: expected key=v1,v2 terms, got '" + term +
                        "'");
    }
    const std::string key = term.substr(0, eq);
    std::istringstream values(term.substr(eq + 1));
    std::string v;
    while (std::getline(values, v, ',')) {
      if (key == "preset") {
        axes.presets.push_back(v);
      } else if (key == "fill_density") {
        if (v == "max") {
          axes.densities.push_back(synth::kMaxFillDensity);
        } else {
          try {
            axes.densities.push_back(std::stoll(v));
          } catch (const std::exception&) {
            throw ConfigError("train.grid: bad fill_density '" + v + "'");
          }
        }
      } else {
        throw ConfigError("train.grid: unknown axis '" + key + "'");
      }
    }
  }
  if (axes.presets.empty()) axes.presets.push_back(cfg.preset_name);
  if (axes.densities.empty()) axes.densities.push_back(cfg.fill_density);
  return axes;
}

std::string density_label(std::int64_t d) {
  return d == synth::kMaxFillDensity ? "max" : std::to_string(d);
}

}  // namespace

fs::path run_grid(const ExperimentConfig& cfg, const std::string& grid_expr,
                  int jobs) {
  cfg.validate();
  const GridAxes axes = parse_grid(grid_expr, cfg);
  const auto pool = labeled_manifest_for(cfg);
  const auto backgrounds = background_manifest_for(cfg);
  const fs::path grid_dir = ensure_dir(fs::path(cfg.out_dir) / "grid");
  const fs::path results_path = grid_dir / "grid_results.csv";
  std::ofstream results(results_path, std::ios::binary | std::ios::trunc);
  if (!results) {
    throw DataError("grid: cannot write " + results_path.string());
  }
  results << "preset,fill_density,epochs,precision,recall,f1,loss,accuracy\n";

  for (const auto density : axes.densities) {
    const fs::path ddir =
        ensure_dir(grid_dir / ("density_" + density_label(density)));
    auto scfg = cfg.synthesis_config();
    scfg.fill_density = density;
    const auto dataset = synth::synth_dataset(backgrounds, pool, scfg,
                                              ddir / "data", jobs);
    for (const auto& preset_name : axes.presets) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.preset_name = preset_name;
      run_cfg.fill_density = density;
      run_cfg.features.n_mels = run_cfg.preset().n_mels;
      auto result =
          crnn::train(dataset, ddir / "data", run_cfg.preset(), run_cfg.train,
                      run_cfg.species, run_cfg.features);
      const fs::path mdir = ensure_dir(ddir / preset_name);
      crnn::save_checkpoint(mdir / "model.ckpt", result.params);
      write_history_csv(mdir / "history.csv", result.history);

      // Threshold-0.5 micro metrics over the validation recordings.
      eval::ConfusionReport pooled;
      pooled.per_species.resize(
          static_cast<std::size_t>(run_cfg.species.count()));
      for (const auto& rec_id : result.val_recordings) {
        const auto entry_it = std::find_if(
            dataset.entries.begin(), dataset.entries.end(),
            [&](const synth::DatasetEntry& e) { return e.audio_path == rec_id; });
        if (entry_it == dataset.entries.end()) continue;
        const auto clip = audio::load_canonical(ddir / "data" / rec_id);
        const auto probs = crnn::predict_recording(result.params, clip);
        const auto truth = labelgrid::read_label_csv(
            ddir / "data" / entry_it->label_path, run_cfg.species,
            clip.duration_seconds());
        const auto ev = eval::evaluate_recording(
            probs, truth, run_cfg.species, run_cfg.train.threshold_default);
        for (std::size_t c = 0; c < pooled.per_species.size(); ++c) {
          pooled.per_species[c] += ev.counts.per_species[c];
        }
        pooled.pooled += ev.counts.pooled;
      }
      const auto m = eval::metrics(pooled.pooled);
      char buf[200];
      std::snprintf(buf, sizeof buf, "%s,%s,%d,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                    preset_name.c_str(), density_label(density).c_str(),
                    result.params.epochs_run, m.precision.value_or(0.0),
                    m.recall.value_or(0.0), m.f1.value_or(0.0),
                    result.params.best_val_loss, m.accuracy);
      results << buf;
      results.flush();
      std::cout << "grid: " << preset_name << " @ density "
                << density_label(density) << " done\n";
    }
  }
  config::write_run_record(grid_dir, cfg, "train --grid", {});
  return results_path;
}

void write_timeline_csv(const fs::path& path, const MatF& probs,
                        const SpeciesList& species, double threshold) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("predict: cannot write " + path.string());
  out << "t_start_s,t_end_s";
  for (const auto& sp : species.entries) {
    const std::string snake = snake_case(sp.common_name);
    out << ',' << snake << "_prob," << snake << "_flag";
  }
  out << "\n";
  char buf[48];
  for (std::size_t t = 0; t < probs.rows; ++t) {
    out << t << ',' << t + 1;
    for (std::size_t c = 0; c < probs.cols; ++c) {
      std::snprintf(buf, sizeof buf, ",%.6f,%d", probs(t, c),
                    static_cast<double>(probs(t, c)) >= threshold ? 1 : 0);
      out << buf;
    }
    out << "\n";
  }
}

MatF read_timeline_csv(const fs::path& path, const SpeciesList& species) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("timeline: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("timeline: empty file " + path.string());
  }
  const auto classes = static_cast<std::size_t>(species.count());
  std::vector<float> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 2 + 2 * classes) {
      throw DataError("timeline: row with " + std::to_string(cells.size()) +
                      " cells in " + path.string() + " (expected " +
                      std::to_string(2 + 2 * classes) + ")");
    }
    for (std::size_t c = 0; c < classes; ++c) {
      values.push_back(std::stof(cells[2 + 2 * c]));
    }
    ++rows;
  }
  MatF probs(rows, classes);
  probs.data = std::move(values);
  return probs;
}

std::vector<fs::path> run_predict(const ExperimentConfig& cfg,
                                  const std::vector<fs::path>& audio,
                                  const fs::path& checkpoint,
                                  double threshold) {
  if (audio.empty()) throw ConfigError("predict: no audio files given");
  auto params = crnn::load_checkpoint(checkpoint);
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "predict");
  std::vector<fs::path> outputs(audio.size());
  for (std::size_t i = 0; i < audio.size(); ++i) {
    const auto clip = audio::load_canonical(audio[i]);
    const auto probs = crnn::predict_recording(params, clip);
    outputs[i] = dir / (audio[i].stem().string() + "_timeline.csv");
    write_timeline_csv(outputs[i], probs, params.species, threshold);
  }
  std::vector<fs::path> inputs = audio;
  inputs.push_back(checkpoint);
  config::write_run_record(dir, cfg, "predict", inputs);
  std::cout << "predict: wrote " << outputs.size() << " timelines to "
            << dir.string() << "\n";
  return outputs;
}

namespace {

struct PairedData {
  MatF probs;   // concatenated rows
  MatU8 truth;  // same shape
};

PairedData load_pairs(const ExperimentConfig& cfg,
                      const std::vector<fs::path>& timelines,
                      const std::vector<fs::path>& truths) {
  if (timelines.empty() || timelines.size() != truths.size()) {
    throw ConfigError(
        "eval: need equal non-empty lists of timelines and truth label "
        "files");
  }
  const auto classes = static_cast<std::size_t>(cfg.species.count());
  PairedData out;
  for (std::size_t i = 0; i < timelines.size(); ++i) {
    const MatF probs = read_timeline_csv(timelines[i], cfg.species);
    const auto track = labelgrid::read_label_csv(
        truths[i], cfg.species, static_cast<double>(probs.rows));
    const MatU8 truth =
        labelgrid::to_segment_matrix(track, cfg.species.count());
    const std::size_t base = out.probs.rows;
    out.probs.rows += probs.rows;
    out.probs.cols = classes;
    out.probs.data.insert(out.probs.data.end(), probs.data.begin(),
                          probs.data.end());
    out.truth.rows += truth.rows;
    out.truth.cols = classes;
    out.truth.data.insert(out.truth.data.end(), truth.data.begin(),
                          truth.data.end());
    (void)base;
  }
  return out;
}

}  // namespace

EvalOutput run_eval(const ExperimentConfig& cfg,
                    const std::vector<fs::path>& timelines,
                    const std::vector<fs::path>& truths, double threshold) {
  const PairedData data = load_pairs(cfg, timelines, truths);
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "eval");

  eval::RecordingEval ev;
  ev.counts = eval::confusion(eval::binarize(data.probs, threshold),
                              data.truth);
  for (const auto& cc : ev.counts.per_species) {
    ev.per_species.push_back(eval::metrics(cc));
  }
  ev.pooled = eval::metrics(ev.counts.pooled);

  EvalOutput out;
  out.csv = dir / "metrics.csv";
  out.json = dir / "metrics.json";
  eval::write_metrics_csv(out.csv, ev, cfg.species);
  eval::write_metrics_json(out.json, ev, cfg.species);
  out.aggregate = std::move(ev);
  std::vector<fs::path> inputs = timelines;
  inputs.insert(inputs.end(), truths.begin(), truths.end());
  config::write_run_record(dir, cfg, "eval", inputs);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "eval: threshold %.2f  P=%s R=%s F1=%s acc=%.4f\n", threshold,
                out.aggregate.pooled.precision
                    ? std::to_string(*out.aggregate.pooled.precision).c_str()
                    : "-",
                out.aggregate.pooled.recall
                    ? std::to_string(*out.aggregate.pooled.recall).c_str()
                    : "-",
                out.aggregate.pooled.f1
                    ? std::to_string(*out.aggregate.pooled.f1).c_str()
                    : "-",
                out.aggregate.pooled.accuracy);
  std::cout << buf;
  return out;
}

SweepOutput run_sweep(const ExperimentConfig& cfg,
                      const std::vector<fs::path>& timelines,
                      const std::vector<fs::path>& truths) {
  const PairedData data = load_pairs(cfg, timelines, truths);
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "sweep");

  std::vector<double> grid(static_cast<std::size_t>(cfg.sweep_points));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = static_cast<double>(i) / (static_cast<double>(grid.size()) - 1);
  }
  const auto curve = eval::sweep(data.probs, data.truth, grid);

  SweepOutput out;
  out.csv = dir / "sweep.csv";
  out.best_f1 = curve.best_f1;
  out.best_threshold = curve.best_threshold;
  eval::write_sweep_csv(out.csv, curve);
  std::vector<fs::path> inputs = timelines;
  inputs.insert(inputs.end(), truths.begin(), truths.end());
  config::write_run_record(dir, cfg, "sweep", inputs);
  char buf[80];
  std::snprintf(buf, sizeof buf, "best F1 %.2f at threshold %.2f\n",
                out.best_f1, out.best_threshold);
  std::cout << buf;
  return out;
}

fs::path run_report(const ExperimentConfig& cfg,
                    const std::vector<fs::path>& timelines) {
  if (timelines.empty()) throw ConfigError("report: no timelines given");
  const fs::path dir = ensure_dir(fs::path(cfg.out_dir) / "report");
  const fs::path html_path = dir / "report.html";
  std::ofstream html(html_path, std::ios::binary | std::ios::trunc);
  if (!html) throw DataError("report: cannot write " + html_path.string());

  html << "<!doctype html>\n<html><head><meta charset=\"utf-8\">\n"
       << "<title>prediction timelines</title>\n<style>\n"
       << "body{font-family:sans-serif;margin:1.5em}\n"
       << "table{border-collapse:collapse;margin-bottom:2em}\n"
       << "td,th{border:1px solid #ccc;padding:2px 4px;font-size:11px}\n"
       << "td.cell{width:14px;height:14px;padding:0}\n"
       << "td.hit{outline:2px solid #d33}\n"
       << "th.species{text-align:left;white-space:nowrap}\n"
       << "</style></head><body>\n<h1>Per-second species predictions</h1>\n";

  const fs::path merged_path = dir / "timelines.csv";
  std::ofstream merged(merged_path, std::ios::binary | std::ios::trunc);
  merged << "recording,t_start_s,t_end_s";
  for (const auto& sp : cfg.species.entries) {
    const std::string snake = snake_case(sp.common_name);
    merged << ',' << snake << "_prob," << snake << "_flag";
  }
  merged << "\n";

  for (const auto& tl : timelines) {
    const MatF probs = read_timeline_csv(tl, cfg.species);
    const std::string rec = tl.stem().string();
    html << "<h2>" << rec << "</h2>\n<table>\n<tr><th class=\"species\">"
         << "species \\ s</th>";
    for (std::size_t t = 0; t < probs.rows; ++t) {
      html << "<th>" << t << "</th>";
    }
    html << "</tr>\n";
    for (std::size_t c = 0; c < probs.cols; ++c) {
      html << "<tr><th class=\"species\">"
           << cfg.species.entries[c].common_name << "</th>";
      for (std::size_t t = 0; t < probs.rows; ++t) {
        const double p = probs(t, c);
        const int alpha = static_cast<int>(p * 255.0);
        const bool hit = p >= cfg.train.threshold_default;
        char cell[120];
        std::snprintf(cell, sizeof cell,
                      "<td class=\"cell%s\" title=\"%.3f\" "
                      "style=\"background:rgba(30,90,200,%.3f)\"></td>",
                      hit ? " hit" : "", p, alpha / 255.0);
        html << cell;
      }
      html << "</tr>\n";
    }
    html << "</table>\n";

    char buf[48];
    for (std::size_t t = 0; t < probs.rows; ++t) {
      merged << rec << ',' << t << ',' << t + 1;
      for (std::size_t c = 0; c < probs.cols; ++c) {
        std::snprintf(buf, sizeof buf, ",%.6f,%d", probs(t, c),
                      static_cast<double>(probs(t, c)) >=
                              cfg.train.threshold_default
                          ? 1
                          : 0);
        merged << buf;
      }
      merged << "\n";
    }
  }
  html << "</body></html>\n";
  config::write_run_record(dir, cfg, "report", timelines);
  std::cout << "report: " << html_path.string() << "\n";
  return html_path;
}

}  // namespace biosed::commands
