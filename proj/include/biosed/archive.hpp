#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "biosed/manifest.hpp"

namespace biosed::archive {

/// One recording as described by the archive's query API, before download.
struct RemoteEntry {
  std::string catalog_id;
  std::string species_common;
  Quality quality = Quality::Unrated;
  std::string file_url;
  double duration_s = 0.0;
};

/// Client for the public recordings archive's JSON API. The query endpoint
/// is GET {base}/api/recordings?query=<text>&page=N with paged responses
/// {"numPages": n, "recordings": [{"id", "en", "q", "length", "file"}]}.
/// Tests run it against a local fixture server; live access sits behind an
/// explicit CLI flag because archive contents drift over time.
class ArchiveClient {
 public:
  explicit ArchiveClient(std::string base_url);

  /// All records matching the species query whose quality grade is in the
  /// filter. An empty filter matches nothing and performs no request.
  /// Throws std::runtime_error on transport errors and DataError when the
  /// response is missing required fields (schema drift).
  std::vector<RemoteEntry> query(const std::string& species_query,
                                 const std::set<Quality>& quality_filter);

  std::vector<std::uint8_t> fetch(const std::string& url);

  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
};

/// Fetches every descriptor into `<dest>/<species_snake>/<id>.wav`,
/// converted to canonical mono 32 kHz, and writes pool_manifest.jsonl.
/// Idempotent: files whose manifest checksum matches are not re-fetched.
/// Per-entry network failures mark the entry failed and continue; a present
/// file whose checksum disagrees with the manifest raises DataError.
PoolManifest download_pool(ArchiveClient& client,
                           const std::vector<RemoteEntry>& descriptors,
                           const SpeciesList& species,
                           const std::filesystem::path& dest_dir,
                           int jobs = 4);

/// "m:ss", "h:mm:ss", or bare seconds -> seconds.
double parse_archive_duration(const std::string& text);

}  // namespace biosed::archive
