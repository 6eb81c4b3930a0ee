#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "biosed/common.hpp"
#include "biosed/manifest.hpp"

namespace biosed::labelgrid {

struct LabelEvent {
  int species_id = 0;
  double start_s = 0.0;
  double end_s = 0.0;
};

/// Event-level ground truth for one recording. Events of the same or
/// different species may overlap.
struct LabelTrack {
  std::vector<LabelEvent> events;
  double recording_duration_s = 0.0;
};

/// Rounds a call interval to whole-second segment indices: both endpoints
/// round half-up to the closest second, and the labeled segments are
/// [start_idx, end_idx). A call short enough to round to an empty interval
/// is rescued by labeling the segment containing its midpoint, so no
/// embedded snippet becomes invisible to training.
std::pair<std::int64_t, std::int64_t> round_interval(double start_s,
                                                     double end_s);

/// T x C binary presence matrix, T = ceil(duration), one row per 1-second
/// segment, columns in SpeciesList order.
MatU8 to_segment_matrix(const LabelTrack& track, int species_count);

/// Repeats each segment row fps times: frame f carries the labels of
/// segment floor(f / fps). total_frames must not exceed T * fps.
MatU8 upsample_to_frames(const MatU8& segments, int fps,
                         std::size_t total_frames);

/// `species,start_s,end_s` rows, 3-decimal fixed-point seconds, species by
/// common name.
void write_label_csv(const std::filesystem::path& path,
                     const LabelTrack& track, const SpeciesList& species);

/// Reads events back; duration_s is supplied by the caller (the CSV carries
/// only the events). Unknown species names raise DataError.
LabelTrack read_label_csv(const std::filesystem::path& path,
                          const SpeciesList& species, double duration_s);

/// Debug dump: T rows x C columns of 0/1.
void write_segment_csv(const std::filesystem::path& path, const MatU8& m);

}  // namespace biosed::labelgrid
