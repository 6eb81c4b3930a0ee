#include "biosed/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace biosed::config {

using nlohmann::json;

void ExperimentConfig::validate() const {
  species.validate();
  features.validate();
  train.validate();
  synthesis_config().validate();
  preset();  // throws on unknown name / bad overrides
  if (out_dir.empty()) throw ConfigError("out_dir: must be non-empty");
  for (double t : eval_thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) {
      throw ConfigError("eval.thresholds: values must be in [0, 1]");
    }
  }
  if (sweep_points < 2) {
    throw ConfigError("eval.sweep_points: must be >= 2");
  }
}

synth::SynthesisConfig ExperimentConfig::synthesis_config() const {
  synth::SynthesisConfig s;
  s.fill_density = fill_density;
  s.species = species;
  s.seed = seed;
  s.gain_mode = gain_mode;
  return s;
}

crnn::Preset ExperimentConfig::preset() const {
  return crnn::apply_overrides(crnn::preset_by_name(preset_name), overrides);
}

namespace {

// at() with a dotted-path error message, so config mistakes point at the
// exact field.
template <typename T>
T field(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(path + key + ": missing required field");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + key + ": wrong type");
  }
}

template <typename T>
T field_or(const json& j, const std::string& path, const char* key,
           T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + key + ": wrong type");
  }
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid json: ") + e.what());
  }
  ExperimentConfig cfg;
  cfg.seed = field_or<std::uint64_t>(j, "", "seed", 0);
  cfg.out_dir = field_or<std::string>(j, "", "out_dir", "runs/out");

  if (!j.contains("species") || !j["species"].is_array()) {
    throw ConfigError("species: missing required list");
  }
  for (const auto& sp : j["species"]) {
    cfg.species.entries.push_back(
        {field<std::string>(sp, "species[].", "common_name"),
         field_or<std::string>(sp, "species[].", "latin_name", "")});
  }

  if (j.contains("pools")) {
    const json& pools = j["pools"];
    cfg.labeled_dir = field_or<std::string>(pools, "pools.", "labeled_dir", "");
    cfg.background_dir =
        field_or<std::string>(pools, "pools.", "background_dir", "");
    if (pools.contains("archive")) {
      const json& arc = pools["archive"];
      cfg.archive_base_url =
          field_or<std::string>(arc, "pools.archive.", "base_url", "");
      if (arc.contains("quality")) {
        cfg.archive_quality.clear();
        for (const auto& q : arc["quality"]) {
          const auto grade = quality_from_name(q.get<std::string>());
          if (!grade) {
            throw ConfigError("pools.archive.quality: unknown grade '" +
                              q.get<std::string>() + "'");
          }
          cfg.archive_quality.insert(*grade);
        }
      }
    }
  }

  if (j.contains("synthesis")) {
    const json& syn = j["synthesis"];
    if (syn.contains("fill_density")) {
      if (syn["fill_density"].is_string()) {
        const auto s = syn["fill_density"].get<std::string>();
        if (s != "max") {
          throw ConfigError(
              "synthesis.fill_density: must be an integer or \"max\"");
        }
        cfg.fill_density = synth::kMaxFillDensity;
      } else {
        cfg.fill_density = field<std::int64_t>(syn, "synthesis.",
                                               "fill_density");
      }
    }
    if (syn.contains("gain_mode")) {
      const json& gm = syn["gain_mode"];
      const auto kind = field<std::string>(gm, "synthesis.gain_mode.", "kind");
      if (kind == "raw_add") {
        cfg.gain_mode.kind = synth::GainMode::Kind::raw_add;
      } else if (kind == "peak_norm_uniform") {
        cfg.gain_mode.kind = synth::GainMode::Kind::peak_norm_uniform;
        cfg.gain_mode.lo =
            field_or<double>(gm, "synthesis.gain_mode.", "lo", 0.25);
        cfg.gain_mode.hi =
            field_or<double>(gm, "synthesis.gain_mode.", "hi", 1.0);
      } else if (kind == "target_snr_db") {
        cfg.gain_mode.kind = synth::GainMode::Kind::target_snr_db;
        cfg.gain_mode.snr_db =
            field<double>(gm, "synthesis.gain_mode.", "value");
      } else {
        throw ConfigError("synthesis.gain_mode.kind: unknown kind '" + kind +
                          "'");
      }
    }
  }

  if (j.contains("features")) {
    const json& f = j["features"];
    cfg.features.fft_size =
        field_or<int>(f, "features.", "fft_size", cfg.features.fft_size);
    cfg.features.hop = field_or<int>(f, "features.", "hop", cfg.features.hop);
    cfg.features.n_mels =
        field_or<int>(f, "features.", "n_mels", cfg.features.n_mels);
    cfg.features.fmin =
        field_or<double>(f, "features.", "fmin", cfg.features.fmin);
    cfg.features.fmax =
        field_or<double>(f, "features.", "fmax", cfg.features.fmax);
    cfg.features.sample_rate = field_or<int>(f, "features.", "sample_rate",
                                             cfg.features.sample_rate);
    cfg.features.db_floor =
        field_or<double>(f, "features.", "db_floor", cfg.features.db_floor);
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    cfg.preset_name =
        field_or<std::string>(m, "model.", "preset", cfg.preset_name);
    if (m.contains("overrides")) {
      const json& o = m["overrides"];
      if (o.contains("conv_blocks")) {
        cfg.overrides.conv_blocks = o["conv_blocks"].get<int>();
      }
      if (o.contains("conv_filters")) {
        cfg.overrides.conv_filters = o["conv_filters"].get<int>();
      }
      if (o.contains("gru_hidden")) {
        cfg.overrides.gru_hidden = o["gru_hidden"].get<int>();
      }
      if (o.contains("gru_layers")) {
        cfg.overrides.gru_layers = o["gru_layers"].get<int>();
      }
    }
  }
  // The preset dictates the mel band count unless features.n_mels was set
  // explicitly alongside a custom preset.
  if (!j.contains("features") || !j["features"].contains("n_mels")) {
    cfg.features.n_mels = cfg.preset().n_mels;
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    auto& tc = cfg.train;
    tc.batch_size = field_or<int>(t, "train.", "batch_size", tc.batch_size);
    tc.max_epochs = field_or<int>(t, "train.", "max_epochs", tc.max_epochs);
    tc.patience = field_or<int>(t, "train.", "patience", tc.patience);
    tc.min_delta = field_or<double>(t, "train.", "min_delta", tc.min_delta);
    tc.learning_rate =
        field_or<double>(t, "train.", "learning_rate", tc.learning_rate);
    tc.adam_beta1 = field_or<double>(t, "train.", "adam_beta1", tc.adam_beta1);
    tc.adam_beta2 = field_or<double>(t, "train.", "adam_beta2", tc.adam_beta2);
    tc.adam_eps = field_or<double>(t, "train.", "adam_eps", tc.adam_eps);
    tc.val_fraction =
        field_or<double>(t, "train.", "val_fraction", tc.val_fraction);
    tc.threshold_default = field_or<double>(t, "train.", "threshold_default",
                                            tc.threshold_default);
  }
  cfg.train.seed = cfg.seed;

  if (j.contains("eval")) {
    const json& e = j["eval"];
    if (e.contains("thresholds")) {
      cfg.eval_thresholds = e["thresholds"].get<std::vector<double>>();
    }
    cfg.sweep_points =
        field_or<int>(e, "eval.", "sweep_points", cfg.sweep_points);
  }
  return cfg;
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  json species = json::array();
  for (const auto& sp : cfg.species.entries) {
    species.push_back({{"common_name", sp.common_name},
                       {"latin_name", sp.latin_name}});
  }
  j["species"] = species;

  json pools;
  pools["labeled_dir"] = cfg.labeled_dir;
  pools["background_dir"] = cfg.background_dir;
  json arc;
  arc["base_url"] = cfg.archive_base_url;
  json grades = json::array();
  for (const auto q : cfg.archive_quality) grades.push_back(quality_name(q));
  arc["quality"] = grades;
  pools["archive"] = arc;
  j["pools"] = pools;

  json syn;
  if (cfg.fill_density == synth::kMaxFillDensity) {
    syn["fill_density"] = "max";
  } else {
    syn["fill_density"] = cfg.fill_density;
  }
  json gm;
  switch (cfg.gain_mode.kind) {
    case synth::GainMode::Kind::raw_add:
      gm["kind"] = "raw_add";
      break;
    case synth::GainMode::Kind::peak_norm_uniform:
      gm["kind"] = "peak_norm_uniform";
      gm["lo"] = cfg.gain_mode.lo;
      gm["hi"] = cfg.gain_mode.hi;
      break;
    case synth::GainMode::Kind::target_snr_db:
      gm["kind"] = "target_snr_db";
      gm["value"] = cfg.gain_mode.snr_db;
      break;
  }
  syn["gain_mode"] = gm;
  j["synthesis"] = syn;

  json f;
  f["fft_size"] = cfg.features.fft_size;
  f["hop"] = cfg.features.hop;
  f["n_mels"] = cfg.features.n_mels;
  f["fmin"] = cfg.features.fmin;
  f["fmax"] = cfg.features.fmax;
  f["sample_rate"] = cfg.features.sample_rate;
  f["db_floor"] = cfg.features.db_floor;
  j["features"] = f;

  json m;
  m["preset"] = cfg.preset_name;
  json o;
  if (cfg.overrides.conv_blocks) o["conv_blocks"] = *cfg.overrides.conv_blocks;
  if (cfg.overrides.conv_filters) {
    o["conv_filters"] = *cfg.overrides.conv_filters;
  }
  if (cfg.overrides.gru_hidden) o["gru_hidden"] = *cfg.overrides.gru_hidden;
  if (cfg.overrides.gru_layers) o["gru_layers"] = *cfg.overrides.gru_layers;
  if (!o.empty()) m["overrides"] = o;
  j["model"] = m;

  json t;
  t["batch_size"] = cfg.train.batch_size;
  t["max_epochs"] = cfg.train.max_epochs;
  t["patience"] = cfg.train.patience;
  t["min_delta"] = cfg.train.min_delta;
  t["learning_rate"] = cfg.train.learning_rate;
  t["adam_beta1"] = cfg.train.adam_beta1;
  t["adam_beta2"] = cfg.train.adam_beta2;
  t["adam_eps"] = cfg.train.adam_eps;
  t["val_fraction"] = cfg.train.val_fraction;
  t["threshold_default"] = cfg.train.threshold_default;
  j["train"] = t;

  json e;
  e["thresholds"] = cfg.eval_thresholds;
  e["sweep_points"] = cfg.sweep_points;
  j["eval"] = e;
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

void save_config(const std::filesystem::path& path,
                 const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("config: cannot write " + path.string());
  out << config_to_json_text(cfg);
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  return fnv1a64(config_to_json_text(cfg));
}

void write_run_record(const std::filesystem::path& dir,
                      const ExperimentConfig& cfg, const std::string& command,
                      const std::vector<std::filesystem::path>& inputs) {
  json j;
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["config_digest"] = to_hex(config_digest(cfg));
  json ins = json::array();
  for (const auto& p : inputs) {
    json entry;
    entry["path"] = p.generic_string();
    std::ifstream in(p, std::ios::binary);
    if (in) {
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
      entry["digest"] = to_hex(fnv1a64(bytes.data(), bytes.size()));
    } else {
      entry["digest"] = nullptr;
    }
    ins.push_back(entry);
  }
  j["inputs"] = ins;
  std::ofstream out(dir / "run.json", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("run: cannot write " + (dir / "run.json").string());
  out << j.dump(2) << "\n";
}

}  // namespace biosed::config
