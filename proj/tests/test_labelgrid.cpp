#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "biosed/labelgrid.hpp"

using namespace biosed;
using labelgrid::LabelTrack;

namespace {

// Independent oracle: per event, apply the stated rounding rule, then test
// membership segment by segment.
MatU8 brute_force_matrix(const LabelTrack& track, int classes) {
  const auto t_end =
      static_cast<std::size_t>(std::ceil(track.recording_duration_s));
  MatU8 m(t_end, static_cast<std::size_t>(classes), 0);
  for (std::size_t t = 0; t < t_end; ++t) {
    for (int c = 0; c < classes; ++c) {
      for (const auto& ev : track.events) {
        if (ev.species_id != c) continue;
        long a = static_cast<long>(std::floor(ev.start_s + 0.5));
        long b = static_cast<long>(std::floor(ev.end_s + 0.5));
        if (a == b) {
          a = static_cast<long>(std::floor((ev.start_s + ev.end_s) / 2.0));
          b = a + 1;
        }
        if (static_cast<long>(t) >= a && static_cast<long>(t) < b) {
          m(t, static_cast<std::size_t>(c)) = 1;
        }
      }
    }
  }
  return m;
}

}  // namespace

TEST_CASE("round_interval follows the closest-second rule") {
  CHECK(labelgrid::round_interval(1.3, 3.6) == std::pair<std::int64_t,
        std::int64_t>{1, 4});
  CHECK(labelgrid::round_interval(0.0, 1.0) == std::pair<std::int64_t,
        std::int64_t>{0, 1});
  // Sub-half-second call rounds empty, midpoint segment is rescued.
  CHECK(labelgrid::round_interval(2.1, 2.3) == std::pair<std::int64_t,
        std::int64_t>{2, 3});
  // Ties round up.
  CHECK(labelgrid::round_interval(0.5, 2.5) == std::pair<std::int64_t,
        std::int64_t>{1, 3});
  CHECK_THROWS_AS(labelgrid::round_interval(2.0, 2.0), DataError);
  CHECK_THROWS_AS(labelgrid::round_interval(3.0, 1.0), DataError);
}

TEST_CASE("to_segment_matrix basics") {
  SUBCASE("empty track gives a zero matrix") {
    LabelTrack track;
    track.recording_duration_s = 5.0;
    const auto m = labelgrid::to_segment_matrix(track, 6);
    CHECK(m.rows == 5);
    CHECK(m.cols == 6);
    for (auto v : m.data) CHECK(v == 0);
  }
  SUBCASE("one event marks exactly end_idx - start_idx segments") {
    LabelTrack track;
    track.recording_duration_s = 5.0;
    track.events.push_back({2, 1.3, 3.6});
    const auto m = labelgrid::to_segment_matrix(track, 6);
    int ones = 0;
    for (auto v : m.data) ones += v;
    CHECK(ones == 3);
    CHECK(m(1, 2) == 1);
    CHECK(m(2, 2) == 1);
    CHECK(m(3, 2) == 1);
  }
  SUBCASE("duplicate events are idempotent") {
    LabelTrack track;
    track.recording_duration_s = 5.0;
    track.events.push_back({1, 0.2, 2.2});
    auto once = labelgrid::to_segment_matrix(track, 3);
    track.events.push_back({1, 0.2, 2.2});
    auto twice = labelgrid::to_segment_matrix(track, 3);
    CHECK(once.data == twice.data);
  }
  SUBCASE("species id out of range") {
    LabelTrack track;
    track.recording_duration_s = 2.0;
    track.events.push_back({5, 0.0, 1.0});
    CHECK_THROWS_AS(labelgrid::to_segment_matrix(track, 3), DataError);
  }
}

TEST_CASE("to_segment_matrix equals the brute-force oracle on 1000 tracks") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    LabelTrack track;
    track.recording_duration_s = rng.uniform(1.0, 30.0);
    const int classes = 1 + static_cast<int>(rng.uniform_index(6));
    const auto n_events = rng.uniform_index(12);
    for (std::size_t e = 0; e < n_events; ++e) {
      const double start =
          rng.uniform(0.0, track.recording_duration_s * 0.95);
      const double len =
          rng.uniform(0.05, track.recording_duration_s - start);
      track.events.push_back(
          {static_cast<int>(rng.uniform_index(
               static_cast<std::size_t>(classes))),
           start, start + len});
    }
    const auto fast = labelgrid::to_segment_matrix(track, classes);
    const auto slow = brute_force_matrix(track, classes);
    REQUIRE(fast.rows == slow.rows);
    CHECK(fast.data == slow.data);
  }
}

TEST_CASE("adding an event never clears a label") {
  Rng rng(11);
  LabelTrack track;
  track.recording_duration_s = 12.0;
  MatU8 prev(12, 4, 0);
  for (int e = 0; e < 20; ++e) {
    const double start = rng.uniform(0.0, 11.0);
    track.events.push_back({static_cast<int>(rng.uniform_index(4)), start,
                            start + rng.uniform(0.05, 1.0)});
    const auto m = labelgrid::to_segment_matrix(track, 4);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      CHECK(m.data[i] >= prev.data[i]);
    }
    prev = m;
  }
}

TEST_CASE("upsample_to_frames") {
  MatU8 seg(2, 1, 0);
  seg(0, 0) = 1;
  SUBCASE("fps 1 is the identity up to truncation") {
    const auto f = labelgrid::upsample_to_frames(seg, 1, 2);
    CHECK(f.data == seg.data);
  }
  SUBCASE("rows repeat fps times") {
    const auto f = labelgrid::upsample_to_frames(seg, 3, 6);
    CHECK(f.data == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0});
  }
  SUBCASE("zero matrix stays zero") {
    MatU8 z(3, 2, 0);
    const auto f = labelgrid::upsample_to_frames(z, 10, 25);
    for (auto v : f.data) CHECK(v == 0);
  }
  SUBCASE("frame overflow is rejected") {
    CHECK_THROWS_AS(labelgrid::upsample_to_frames(seg, 3, 7), DataError);
  }
}

TEST_CASE("label csv round trip") {
  SpeciesList species;
  species.entries = {{"Alpha Bird", "Avis alpha"}, {"Beta Bird", "Avis beta"}};
  LabelTrack track;
  track.recording_duration_s = 10.0;
  track.events.push_back({0, 1.25, 3.5});
  track.events.push_back({1, 2.0, 2.4});
  const auto dir = std::filesystem::temp_directory_path() / "biosed_lbl_t";
  std::filesystem::create_directories(dir);
  labelgrid::write_label_csv(dir / "x.csv", track, species);
  const auto back = labelgrid::read_label_csv(dir / "x.csv", species, 10.0);
  REQUIRE(back.events.size() == 2);
  CHECK(back.events[0].species_id == 0);
  CHECK(back.events[0].start_s == doctest::Approx(1.25));
  CHECK(back.events[1].end_s == doctest::Approx(2.4));
  std::filesystem::remove_all(dir);
}
