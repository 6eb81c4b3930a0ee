#include "biosed/labelgrid.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace biosed::labelgrid {

std::pair<std::int64_t, std::int64_t> round_interval(double start_s,
                                                     double end_s) {
  if (!(start_s >= 0.0) || !(start_s < end_s)) {
    throw DataError("round_interval: invalid interval [" +
                    std::to_string(start_s) + ", " + std::to_string(end_s) +
                    ")");
  }
  // Closest second, ties at x.5 rounding up.
  auto round_half_up = [](double x) {
    return static_cast<std::int64_t>(std::floor(x + 0.5));
  };
  std::int64_t a = round_half_up(start_s);
  std::int64_t b = round_half_up(end_s);
  if (a == b) {
    // Sub-half-second call collapsed to nothing; label the segment holding
    // its midpoint instead.
    const auto m =
        static_cast<std::int64_t>(std::floor((start_s + end_s) / 2.0));
    return {m, m + 1};
  }
  return {a, b};
}

MatU8 to_segment_matrix(const LabelTrack& track, int species_count) {
  const auto t_end = static_cast<std::size_t>(
      std::ceil(std::max(0.0, track.recording_duration_s)));
  MatU8 m(t_end, static_cast<std::size_t>(species_count), 0);
  for (const auto& ev : track.events) {
    if (ev.species_id < 0 || ev.species_id >= species_count) {
      throw DataError("labels: species id " + std::to_string(ev.species_id) +
                      " out of range (C=" + std::to_string(species_count) +
                      ")");
    }
    const auto [a, b] = round_interval(ev.start_s, ev.end_s);
    const auto hi = std::min<std::int64_t>(b, static_cast<std::int64_t>(t_end));
    for (std::int64_t t = std::max<std::int64_t>(a, 0); t < hi; ++t) {
      m(static_cast<std::size_t>(t),
        static_cast<std::size_t>(ev.species_id)) = 1;
    }
  }
  return m;
}

MatU8 upsample_to_frames(const MatU8& segments, int fps,
                         std::size_t total_frames) {
  if (fps < 1) throw ConfigError("upsample_to_frames: fps must be >= 1");
  if (total_frames > segments.rows * static_cast<std::size_t>(fps)) {
    throw DataError("upsample_to_frames: " + std::to_string(total_frames) +
                    " frames exceed " + std::to_string(segments.rows) + " x " +
                    std::to_string(fps));
  }
  MatU8 out(total_frames, segments.cols, 0);
  for (std::size_t f = 0; f < total_frames; ++f) {
    const std::size_t seg = f / static_cast<std::size_t>(fps);
    std::copy(segments.row(seg), segments.row(seg) + segments.cols,
              out.row(f));
  }
  return out;
}

void write_label_csv(const std::filesystem::path& path,
                     const LabelTrack& track, const SpeciesList& species) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("labels: cannot write " + path.string());
  out << "species,start_s,end_s\n";
  char buf[64];
  for (const auto& ev : track.events) {
    if (ev.species_id < 0 || ev.species_id >= species.count()) {
      throw DataError("labels: species id out of range while writing");
    }
    std::snprintf(buf, sizeof buf, ",%.3f,%.3f\n", ev.start_s, ev.end_s);
    out << species.entries[static_cast<std::size_t>(ev.species_id)].common_name
        << buf;
  }
}

LabelTrack read_label_csv(const std::filesystem::path& path,
                          const SpeciesList& species, double duration_s) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("labels: cannot open " + path.string());
  LabelTrack track;
  track.recording_duration_s = duration_s;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("species,", 0) == 0) continue;  // header
    }
    std::istringstream row(line);
    std::string name, start, end;
    if (!std::getline(row, name, ',') || !std::getline(row, start, ',') ||
        !std::getline(row, end, ',')) {
      throw DataError("labels: malformed row '" + line + "' in " +
                      path.string());
    }
    const int id = species.index_of(name);
    if (id < 0) {
      throw DataError("labels: unknown species '" + name + "' in " +
                      path.string());
    }
    try {
      track.events.push_back({id, std::stod(start), std::stod(end)});
    } catch (const std::exception&) {
      throw DataError("labels: non-numeric time in '" + line + "'");
    }
  }
  return track;
}

void write_segment_csv(const std::filesystem::path& path, const MatU8& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("labels: cannot write " + path.string());
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      out << (c ? "," : "") << static_cast<int>(m(r, c));
    }
    out << "\n";
  }
}

}  // namespace biosed::labelgrid
