#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "biosed/common.hpp"

namespace biosed {

enum class Quality { A, B, C, D, E, Unrated };

const char* quality_name(Quality q);
std::optional<Quality> quality_from_name(std::string_view s);

struct SpeciesInfo {
  std::string common_name;
  std::string latin_name;
};

/// Ordered species registry; the index order defines class ids 0..C-1 and is
/// the single source of truth for label-matrix columns, model outputs, and
/// report rows across one experiment.
struct SpeciesList {
  std::vector<SpeciesInfo> entries;

  int count() const { return static_cast<int>(entries.size()); }
  /// Index by common name (exact or snake_case match); -1 if absent.
  int index_of(std::string_view common_name) const;
  void validate() const;  // non-empty, unique names
};

/// Sentinel species id carried by background-pool entries.
inline constexpr int kNoSpecies = -1;

struct PoolEntry {
  int species_id = kNoSpecies;
  std::string source_ref;  // archive catalog number or relative path
  Quality quality = Quality::Unrated;
  double duration_s = 0.0;
  std::string local_path;
  std::string checksum;  // fnv1a64 hex of the stored file; empty if unknown
  bool failed = false;   // download recorded as failed
};

enum class PoolKind { labeled_snippets, backgrounds };

struct PoolManifest {
  SpeciesList species;
  std::vector<PoolEntry> entries;
  // Deterministic by default (empty) so rescans and reruns are
  // byte-identical; set explicitly when provenance wall-clock is wanted.
  std::string created_at;
  PoolKind pool_kind = PoolKind::labeled_snippets;
};

/// Scans an offline pool directory: `<dir>/<species_snake_case>/*.wav` for
/// labeled pools, `<dir>/*.wav` flat for backgrounds. Entries are sorted by
/// (species_id, source_ref) so the manifest is a deterministic function of
/// the directory contents. Unreadable WAVs are skipped and counted;
/// a subdirectory matching no species raises DataError.
PoolManifest build_pool_manifest(const std::filesystem::path& dir,
                                 const SpeciesList& species, PoolKind kind,
                                 int* skipped_files = nullptr);

/// Line-oriented JSON: one header record (schema_version 1, kind, species),
/// then one entry object per line.
void write_pool_manifest(const std::filesystem::path& path,
                         const PoolManifest& manifest);
PoolManifest read_pool_manifest(const std::filesystem::path& path);

std::string pool_manifest_to_string(const PoolManifest& manifest);
PoolManifest pool_manifest_from_string(const std::string& text);

}  // namespace biosed
