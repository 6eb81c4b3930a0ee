#include "biosed/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "biosed/audio.hpp"

namespace biosed {

using nlohmann::json;

const char* quality_name(Quality q) {
  switch (q) {
    case Quality::A: return "A";
    case Quality::B: return "B";
    case Quality::C: return "C";
    case Quality::D: return "D";
    case Quality::E: return "E";
    case Quality::Unrated: return "unrated";
  }
  return "?";
}

std::optional<Quality> quality_from_name(std::string_view s) {
  if (s == "A") return Quality::A;
  if (s == "B") return Quality::B;
  if (s == "C") return Quality::C;
  if (s == "D") return Quality::D;
  if (s == "E") return Quality::E;
  if (s == "unrated" || s.empty()) return Quality::Unrated;
  return std::nullopt;
}

int SpeciesList::index_of(std::string_view common_name) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].common_name == common_name ||
        snake_case(entries[i].common_name) == common_name) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

void SpeciesList::validate() const {
  if (entries.empty()) throw ConfigError("species: list must be non-empty");
  std::set<std::string> seen;
  for (const auto& sp : entries) {
    if (sp.common_name.empty()) {
      throw ConfigError("species: empty common name");
    }
    if (!seen.insert(snake_case(sp.common_name)).second) {
      throw ConfigError("species: duplicate name '" + sp.common_name + "'");
    }
  }
}

namespace {

const char* pool_kind_name(PoolKind k) {
  return k == PoolKind::labeled_snippets ? "labeled_snippets" : "backgrounds";
}

PoolKind pool_kind_from_name(const std::string& s) {
  if (s == "labeled_snippets") return PoolKind::labeled_snippets;
  if (s == "backgrounds") return PoolKind::backgrounds;
  throw DataError("manifest: unknown pool kind '" + s + "'");
}

json entry_to_json(const PoolEntry& e) {
  json j;
  j["species_id"] = e.species_id;
  j["source_ref"] = e.source_ref;
  j["quality"] = quality_name(e.quality);
  j["duration_s"] = e.duration_s;
  j["local_path"] = e.local_path;
  if (!e.checksum.empty()) j["checksum"] = e.checksum;
  if (e.failed) j["failed"] = true;
  return j;
}

PoolEntry entry_from_json(const json& j) {
  PoolEntry e;
  e.species_id = j.at("species_id").get<int>();
  e.source_ref = j.at("source_ref").get<std::string>();
  const auto q = quality_from_name(j.at("quality").get<std::string>());
  if (!q) throw DataError("manifest: bad quality grade");
  e.quality = *q;
  e.duration_s = j.at("duration_s").get<double>();
  e.local_path = j.at("local_path").get<std::string>();
  e.checksum = j.value("checksum", std::string{});
  e.failed = j.value("failed", false);
  return e;
}

}  // namespace

PoolManifest build_pool_manifest(const std::filesystem::path& dir,
                                 const SpeciesList& species, PoolKind kind,
                                 int* skipped_files) {
  namespace fs = std::filesystem;
  species.validate();
  if (!fs::is_directory(dir)) {
    throw DataError("manifest: not a directory: " + dir.string());
  }
  PoolManifest manifest;
  manifest.species = species;
  manifest.pool_kind = kind;
  int skipped = 0;

  auto add_file = [&](const fs::path& file, int species_id) {
    if (file.extension() != ".wav") return;
    PoolEntry e;
    e.species_id = species_id;
    e.source_ref = fs::relative(file, dir).generic_string();
    e.local_path = file.generic_string();
    try {
      e.duration_s = audio::wav_file_duration_seconds(file);
    } catch (const DataError&) {
      ++skipped;
      return;
    }
    manifest.entries.push_back(std::move(e));
  };

  if (kind == PoolKind::backgrounds) {
    for (const auto& de : fs::directory_iterator(dir)) {
      if (de.is_regular_file()) add_file(de.path(), kNoSpecies);
    }
  } else {
    for (const auto& de : fs::directory_iterator(dir)) {
      if (!de.is_directory()) continue;
      const std::string name = de.path().filename().string();
      const int id = species.index_of(name);
      if (id < 0) {
        throw DataError("manifest: directory '" + name +
                        "' matches no species in the species list");
      }
      for (const auto& f : fs::directory_iterator(de.path())) {
        if (f.is_regular_file()) add_file(f.path(), id);
      }
    }
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const PoolEntry& a, const PoolEntry& b) {
              return std::tie(a.species_id, a.source_ref) <
                     std::tie(b.species_id, b.source_ref);
            });
  if (skipped_files) *skipped_files = skipped;
  return manifest;
}

std::string pool_manifest_to_string(const PoolManifest& manifest) {
  std::ostringstream out;
  json header;
  header["schema_version"] = 1;
  header["pool_kind"] = pool_kind_name(manifest.pool_kind);
  header["created_at"] = manifest.created_at;
  json species = json::array();
  for (const auto& sp : manifest.species.entries) {
    species.push_back({{"common_name", sp.common_name},
                       {"latin_name", sp.latin_name}});
  }
  header["species"] = species;
  out << header.dump() << "\n";
  for (const auto& e : manifest.entries) {
    out << entry_to_json(e).dump() << "\n";
  }
  return out.str();
}

PoolManifest pool_manifest_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("manifest: empty manifest file");
  }
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: bad header line: ") + e.what());
  }
  if (header.value("schema_version", 0) != 1) {
    throw DataError("manifest: unsupported schema_version");
  }
  PoolManifest manifest;
  manifest.pool_kind = pool_kind_from_name(header.at("pool_kind"));
  manifest.created_at = header.value("created_at", std::string{});
  for (const auto& sp : header.at("species")) {
    manifest.species.entries.push_back(
        {sp.at("common_name").get<std::string>(),
         sp.value("latin_name", std::string{})});
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      manifest.entries.push_back(entry_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(std::string("manifest: bad entry line: ") + e.what());
    }
  }
  return manifest;
}

void write_pool_manifest(const std::filesystem::path& path,
                         const PoolManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("manifest: cannot write " + path.string());
  out << pool_manifest_to_string(manifest);
}

PoolManifest read_pool_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("manifest: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return pool_manifest_from_string(buf.str());
}

}  // namespace biosed
