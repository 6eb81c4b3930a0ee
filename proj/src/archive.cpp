#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "biosed/archive.hpp"

#include <mutex>

#include <json.hpp>

#include "biosed/audio.hpp"

namespace biosed::archive {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // /path?query
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw DataError("archive: not an absolute url: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string urlencode(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

}  // namespace

double parse_archive_duration(const std::string& text) {
  double parts[3] = {0, 0, 0};
  int n = 0;
  std::string cur;
  auto flush = [&] {
    if (n < 3) parts[n++] = cur.empty() ? 0.0 : std::stod(cur);
    cur.clear();
  };
  for (char c : text) {
    if (c == ':') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  double seconds = 0.0;
  for (int i = 0; i < n; ++i) seconds = seconds * 60.0 + parts[i];
  return seconds;
}

ArchiveClient::ArchiveClient(std::string base_url)
    : base_url_(std::move(base_url)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::vector<RemoteEntry> ArchiveClient::query(
    const std::string& species_query,
    const std::set<Quality>& quality_filter) {
  if (species_query.empty()) {
    throw ConfigError("archive: species query must be non-empty");
  }
  std::vector<RemoteEntry> out;
  if (quality_filter.empty()) return out;

  httplib::Client cli(base_url_);
  cli.set_connection_timeout(10);
  cli.set_read_timeout(30);
  int page = 1;
  int num_pages = 1;
  while (page <= num_pages) {
    const std::string path = "/api/recordings?query=" +
                             urlencode(species_query) +
                             "&page=" + std::to_string(page);
    auto res = cli.Get(path);
    if (!res) {
      throw std::runtime_error("archive: request failed for " + base_url_ +
                               path + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw std::runtime_error("archive: HTTP " + std::to_string(res->status) +
                               " for " + path);
    }
    json body;
    try {
      body = json::parse(res->body);
    } catch (const json::exception& e) {
      throw DataError(std::string("archive: response is not json: ") +
                      e.what());
    }
    if (!body.contains("recordings") || !body["recordings"].is_array()) {
      throw DataError("archive: response schema changed: no recordings array");
    }
    num_pages = body.value("numPages", 1);
    for (const auto& rec : body["recordings"]) {
      if (!rec.contains("id") || !rec.contains("en") || !rec.contains("q") ||
          !rec.contains("file")) {
        throw DataError(
            "archive: response schema changed: record missing id/en/q/file");
      }
      const auto q = quality_from_name(rec["q"].get<std::string>());
      RemoteEntry e;
      e.catalog_id = rec["id"].is_string()
                         ? rec["id"].get<std::string>()
                         : std::to_string(rec["id"].get<std::int64_t>());
      e.species_common = rec["en"].get<std::string>();
      e.quality = q.value_or(Quality::Unrated);
      e.file_url = rec["file"].get<std::string>();
      e.duration_s =
          parse_archive_duration(rec.value("length", std::string{"0"}));
      if (quality_filter.count(e.quality)) {
        out.push_back(std::move(e));
      }
    }
    ++page;
  }
  return out;
}

std::vector<std::uint8_t> ArchiveClient::fetch(const std::string& url) {
  const std::string absolute =
      url.find("://") == std::string::npos ? base_url_ + url : url;
  const SplitUrl parts = split_url(absolute);
  httplib::Client cli(parts.origin);
  cli.set_connection_timeout(10);
  cli.set_read_timeout(120);
  cli.set_follow_location(true);
  auto res = cli.Get(parts.path);
  if (!res) {
    throw std::runtime_error("archive: download failed for " + absolute +
                             ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw std::runtime_error("archive: HTTP " + std::to_string(res->status) +
                             " for " + absolute);
  }
  return {res->body.begin(), res->body.end()};
}

PoolManifest download_pool(ArchiveClient& client,
                           const std::vector<RemoteEntry>& descriptors,
                           const SpeciesList& species,
                           const std::filesystem::path& dest_dir,
                           int jobs) {
  namespace fs = std::filesystem;
  species.validate();
  fs::create_directories(dest_dir);

  // Prior manifest, if any, supplies the checksums that make re-runs skip
  // completed downloads.
  std::map<std::string, PoolEntry> known;
  const fs::path manifest_path = dest_dir / "pool_manifest.jsonl";
  if (fs::exists(manifest_path)) {
    for (const auto& e : read_pool_manifest(manifest_path).entries) {
      known.emplace(e.source_ref, e);
    }
  }

  std::vector<PoolEntry> results(descriptors.size());
  std::mutex fetch_note;
  parallel_for(descriptors.size(), jobs, [&](std::size_t i) {
    const RemoteEntry& d = descriptors[i];
    const int species_id = species.index_of(d.species_common);
    if (species_id < 0) {
      throw DataError("archive: downloaded species '" + d.species_common +
                      "' is not in the species list");
    }
    const fs::path species_dir =
        dest_dir / snake_case(d.species_common);
    {
      std::lock_guard<std::mutex> lock(fetch_note);
      fs::create_directories(species_dir);
    }
    const fs::path target = species_dir / (d.catalog_id + ".wav");

    PoolEntry entry;
    entry.species_id = species_id;
    entry.source_ref = d.catalog_id;
    entry.quality = d.quality;
    entry.local_path = target.generic_string();

    const auto prior = known.find(d.catalog_id);
    if (fs::exists(target)) {
      std::ifstream in(target, std::ios::binary);
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
      const std::string digest =
          to_hex(fnv1a64(bytes.data(), bytes.size()));
      if (prior != known.end() && !prior->second.checksum.empty()) {
        if (prior->second.checksum != digest) {
          throw DataError("archive: checksum mismatch for " +
                          target.string() +
                          "; delete the file to re-download");
        }
        results[i] = prior->second;
        return;
      }
      entry.checksum = digest;
      entry.duration_s = audio::wav_file_duration_seconds(target);
      results[i] = entry;
      return;
    }

    try {
      const auto raw = client.fetch(d.file_url);
      auto clip = audio::decode_wav(raw, d.catalog_id);
      clip = audio::resample(clip, audio::kCanonicalRate);
      audio::clamp_amplitude(clip.samples);
      const auto encoded = audio::encode_wav(clip);
      std::ofstream out(target, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(encoded.data()),
                static_cast<std::streamsize>(encoded.size()));
      out.close();
      entry.checksum = to_hex(fnv1a64(encoded.data(), encoded.size()));
      entry.duration_s = clip.duration_seconds();
    } catch (const std::runtime_error&) {
      entry.failed = true;
      entry.duration_s = 0.0;
    }
    results[i] = entry;
  });

  PoolManifest manifest;
  manifest.species = species;
  manifest.pool_kind = PoolKind::labeled_snippets;
  manifest.entries = std::move(results);
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const PoolEntry& a, const PoolEntry& b) {
              return std::tie(a.species_id, a.source_ref) <
                     std::tie(b.species_id, b.source_ref);
            });
  write_pool_manifest(manifest_path, manifest);
  return manifest;
}

}  // namespace biosed::archive
