#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "biosed/synth.hpp"
#include "support/toygen.hpp"

using namespace biosed;
using namespace biosed::synth;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Manifest with one synthetic entry per (species, k); durations are real so
// entry_samples matches loadable clips when local paths exist.
PoolManifest fake_pool(const SpeciesList& species, int per_species,
                       double duration_s) {
  PoolManifest pool;
  pool.species = species;
  pool.pool_kind = PoolKind::labeled_snippets;
  for (int sp = 0; sp < species.count(); ++sp) {
    for (int k = 0; k < per_species; ++k) {
      PoolEntry e;
      e.species_id = sp;
      e.source_ref = "sp" + std::to_string(sp) + "_" + std::to_string(k);
      e.duration_s = duration_s;
      pool.entries.push_back(e);
    }
  }
  return pool;
}

SynthesisConfig base_cfg(const SpeciesList& species, std::int64_t density,
                         std::uint64_t seed) {
  SynthesisConfig cfg;
  cfg.fill_density = density;
  cfg.species = species;
  cfg.seed = seed;
  cfg.gain_mode.kind = GainMode::Kind::raw_add;
  return cfg;
}

float ulp_of(float x) {
  return std::nextafter(std::abs(x), std::numeric_limits<float>::infinity()) -
         std::abs(x);
}

}  // namespace

TEST_CASE("plan_embeddings: density 50 over 6 species splits {9,9,8,8,8,8}") {
  const auto species = testsupport::toy_species();
  const auto pool = fake_pool(species, 4, 1.0);
  const auto plan = plan_embeddings(pool, 32000 * 60, base_cfg(species, 50, 7));
  REQUIRE(plan.placements.size() == 50);
  std::map<int, int> counts;
  for (const auto& p : plan.placements) counts[p.species_id]++;
  std::vector<int> sorted;
  for (const auto& [sp, n] : counts) sorted.push_back(n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  CHECK(sorted == std::vector<int>{9, 9, 8, 8, 8, 8});
}

TEST_CASE("plan_embeddings: density 6 over 6 species is one each") {
  const auto species = testsupport::toy_species();
  const auto pool = fake_pool(species, 3, 0.8);
  const auto plan = plan_embeddings(pool, 32000 * 30, base_cfg(species, 6, 1));
  std::map<int, int> counts;
  for (const auto& p : plan.placements) counts[p.species_id]++;
  REQUIRE(counts.size() == 6);
  for (const auto& [sp, n] : counts) CHECK(n == 1);
}

TEST_CASE("plan_embeddings: deterministic per seed") {
  const auto species = testsupport::toy_species();
  const auto pool = fake_pool(species, 5, 1.3);
  const auto a = plan_embeddings(pool, 32000 * 20, base_cfg(species, 23, 99));
  const auto b = plan_embeddings(pool, 32000 * 20, base_cfg(species, 23, 99));
  REQUIRE(a.placements.size() == b.placements.size());
  for (std::size_t i = 0; i < a.placements.size(); ++i) {
    CHECK(a.placements[i].pool_index == b.placements[i].pool_index);
    CHECK(a.placements[i].start_sample == b.placements[i].start_sample);
    CHECK(a.placements[i].gain == b.placements[i].gain);
  }
  const auto c = plan_embeddings(pool, 32000 * 20, base_cfg(species, 23, 100));
  bool any_diff = false;
  for (std::size_t i = 0; i < a.placements.size(); ++i) {
    any_diff |= a.placements[i].start_sample != c.placements[i].start_sample;
  }
  CHECK(any_diff);
}

TEST_CASE("plan_embeddings: MAX places every entry exactly once") {
  const auto species = testsupport::toy_species();
  const auto pool = fake_pool(species, 7, 0.6);
  const auto plan = plan_embeddings(pool, 32000 * 120,
                                    base_cfg(species, kMaxFillDensity, 5));
  REQUIRE(plan.placements.size() == pool.entries.size());
  std::vector<int> used(pool.entries.size(), 0);
  for (const auto& p : plan.placements) used[p.pool_index]++;
  for (int u : used) CHECK(u == 1);
}

TEST_CASE("plan_embeddings: placements never exceed the background") {
  const auto species = testsupport::toy_species();
  const auto pool = fake_pool(species, 3, 2.0);
  // Background shorter than the snippets: everything trims to full length.
  const std::size_t bg_len = 32000;
  const auto plan = plan_embeddings(pool, bg_len, base_cfg(species, 12, 3));
  for (const auto& p : plan.placements) {
    CHECK(p.trimmed_len_samples <= bg_len);
    CHECK(p.start_sample + p.trimmed_len_samples <= bg_len);
  }
}

TEST_CASE("plan_embeddings: errors") {
  const auto species = testsupport::toy_species();
  auto pool = fake_pool(species, 2, 1.0);
  CHECK_THROWS_AS(
      plan_embeddings(pool, 0, base_cfg(species, 5, 1)), DataError);
  // Remove one species' entries entirely.
  pool.entries.erase(
      std::remove_if(pool.entries.begin(), pool.entries.end(),
                     [](const PoolEntry& e) { return e.species_id == 3; }),
      pool.entries.end());
  CHECK_THROWS_AS(
      plan_embeddings(pool, 32000, base_cfg(species, 12, 1)), DataError);
}

TEST_CASE("plan invariant under manifest re-serialization") {
  const auto species = testsupport::toy_species();
  const auto pool = fake_pool(species, 4, 1.1);
  const auto round_tripped =
      pool_manifest_from_string(pool_manifest_to_string(pool));
  const auto a = plan_embeddings(pool, 32000 * 10, base_cfg(species, 20, 42));
  const auto b =
      plan_embeddings(round_tripped, 32000 * 10, base_cfg(species, 20, 42));
  REQUIRE(a.placements.size() == b.placements.size());
  for (std::size_t i = 0; i < a.placements.size(); ++i) {
    CHECK(a.placements[i].pool_index == b.placements[i].pool_index);
    CHECK(a.placements[i].start_sample == b.placements[i].start_sample);
  }
}

TEST_CASE("render_mixture") {
  const auto species = testsupport::toy_species();
  Rng rng(55);
  std::vector<audio::AudioClip> clips;
  PoolManifest pool;
  pool.species = species;
  for (int sp = 0; sp < species.count(); ++sp) {
    auto clip = testsupport::make_toy_call(sp, rng);
    PoolEntry e;
    e.species_id = sp;
    e.source_ref = "c" + std::to_string(sp);
    e.duration_s = clip.duration_seconds();
    pool.entries.push_back(e);
    clips.push_back(std::move(clip));
  }
  auto background = testsupport::make_pink_noise(20.0, 0.05, rng);

  SUBCASE("empty plan returns the background untouched") {
    EmbeddingPlan plan;
    plan.gain_mode.kind = GainMode::Kind::raw_add;
    const auto [mix, track] = render_mixture(background, plan, clips);
    CHECK(mix.samples == background.samples);
    CHECK(track.events.empty());
  }

  SUBCASE("zero background: the placement region is exactly gain*snippet") {
    audio::AudioClip silent;
    silent.sample_rate = 32000;
    silent.samples.assign(32000 * 10, 0.0f);
    EmbeddingPlan plan;
    plan.gain_mode.kind = GainMode::Kind::raw_add;
    Placement p;
    p.pool_index = 2;
    p.species_id = 2;
    p.start_sample = 12345;
    p.gain = 0.5;
    p.trimmed_len_samples = clips[2].samples.size();
    plan.placements.push_back(p);
    const auto [mix, track] = render_mixture(silent, plan, clips);
    for (std::size_t i = 0; i < p.trimmed_len_samples; ++i) {
      CHECK(mix.samples[p.start_sample + i] ==
            0.5f * clips[2].samples[i]);
    }
    for (std::size_t i = 0; i < p.start_sample; ++i) {
      CHECK(mix.samples[i] == 0.0f);
    }
    REQUIRE(track.events.size() == 1);
    CHECK(track.events[0].start_s == doctest::Approx(12345.0 / 32000.0));
  }

  SUBCASE("subtraction oracle on non-overlapping placements") {
    EmbeddingPlan plan;
    plan.gain_mode.kind = GainMode::Kind::raw_add;
    Placement a;
    a.pool_index = 0;
    a.species_id = 0;
    a.start_sample = 1000;
    a.gain = 0.4;
    a.trimmed_len_samples = clips[0].samples.size();
    Placement b;
    b.pool_index = 1;
    b.species_id = 1;
    b.start_sample = a.start_sample + a.trimmed_len_samples + 5000;
    b.gain = 0.7;
    b.trimmed_len_samples = clips[1].samples.size();
    plan.placements = {a, b};
    const auto [mix, track] = render_mixture(background, plan, clips);
    for (const auto& p : plan.placements) {
      const auto& snip = clips[p.pool_index].samples;
      const float g = static_cast<float>(p.gain);
      for (std::size_t i = 0; i < p.trimmed_len_samples; ++i) {
        const float expected = g * snip[i];
        const float diff = mix.samples[p.start_sample + i] -
                           background.samples[p.start_sample + i];
        const float tol = ulp_of(mix.samples[p.start_sample + i]) +
                          ulp_of(expected);
        CHECK(std::abs(diff - expected) <= tol);
      }
    }
    CHECK(track.events.size() == 2);
  }

  SUBCASE("plan out of range is rejected") {
    EmbeddingPlan plan;
    Placement p;
    p.pool_index = 0;
    p.species_id = 0;
    p.start_sample = background.samples.size() - 10;
    p.trimmed_len_samples = clips[0].samples.size();
    plan.placements.push_back(p);
    CHECK_THROWS_AS(render_mixture(background, plan, clips), DataError);
  }
}

TEST_CASE("synth_dataset: end to end on a generated fixture") {
  TempDir root("biosed_synth_t");
  const auto species = testsupport::toy_species();
  testsupport::generate_toy_pool(root.path / "pool", 2, 11);
  testsupport::generate_toy_backgrounds(root.path / "bg", 2, 8.0, 12);
  const auto pool = build_pool_manifest(root.path / "pool", species,
                                        PoolKind::labeled_snippets);
  const auto bgs = build_pool_manifest(root.path / "bg", species,
                                       PoolKind::backgrounds);

  SUBCASE("density 6 yields 6 events per background") {
    auto cfg = base_cfg(species, 6, 21);
    cfg.gain_mode.kind = GainMode::Kind::peak_norm_uniform;
    const auto manifest =
        synth_dataset(bgs, pool, cfg, root.path / "out", 2);
    REQUIRE(manifest.entries.size() == 2);
    std::size_t total_events = 0;
    for (const auto& e : manifest.entries) {
      CHECK(fs::exists(root.path / "out" / e.audio_path));
      const auto track = labelgrid::read_label_csv(
          root.path / "out" / e.label_path, species, e.duration_s);
      total_events += track.events.size();
      for (const auto& ev : track.events) {
        CHECK(ev.start_s >= 0.0);
        CHECK(ev.end_s <= e.duration_s + 1e-9);
        CHECK(ev.start_s < ev.end_s);
      }
    }
    CHECK(total_events == 12);  // density * backgrounds
  }

  SUBCASE("reruns are byte-identical") {
    auto cfg = base_cfg(species, 4, 77);
    cfg.gain_mode.kind = GainMode::Kind::peak_norm_uniform;
    synth_dataset(bgs, pool, cfg, root.path / "out1", 1);
    synth_dataset(bgs, pool, cfg, root.path / "out2", 2);
    for (const char* name :
         {"dataset_manifest.jsonl", "bg_00_synth.wav", "bg_00_labels.csv",
          "bg_01_synth.wav", "bg_01_labels.csv"}) {
      std::ifstream a(root.path / "out1" / name, std::ios::binary);
      std::ifstream b(root.path / "out2" / name, std::ios::binary);
      REQUIRE(a);
      REQUIRE(b);
      const std::string sa((std::istreambuf_iterator<char>(a)),
                           std::istreambuf_iterator<char>());
      const std::string sb((std::istreambuf_iterator<char>(b)),
                           std::istreambuf_iterator<char>());
      CHECK(sa == sb);
    }
  }

  SUBCASE("MAX density embeds the whole pool exactly once across files") {
    auto cfg = base_cfg(species, kMaxFillDensity, 5);
    const auto manifest = synth_dataset(bgs, pool, cfg, root.path / "outm", 1);
    std::size_t total_events = 0;
    for (const auto& e : manifest.entries) {
      const auto track = labelgrid::read_label_csv(
          root.path / "outm" / e.label_path, species, e.duration_s);
      total_events += track.events.size();
    }
    CHECK(total_events == pool.entries.size());
  }

  SUBCASE("dataset manifest round trips") {
    auto cfg = base_cfg(species, 3, 9);
    const auto manifest = synth_dataset(bgs, pool, cfg, root.path / "outr", 1);
    const auto back =
        read_dataset_manifest(root.path / "outr" / "dataset_manifest.jsonl");
    REQUIRE(back.entries.size() == manifest.entries.size());
    for (std::size_t i = 0; i < back.entries.size(); ++i) {
      CHECK(back.entries[i].audio_path == manifest.entries[i].audio_path);
      CHECK(back.entries[i].duration_s == manifest.entries[i].duration_s);
    }
  }
}

TEST_CASE("resolve_gain: target snr mode hits the requested ratio") {
  Rng rng(3);
  auto bg = testsupport::make_pink_noise(2.0, 0.1, rng);
  audio::AudioClip snip;
  snip.sample_rate = 32000;
  snip.samples.assign(16000, 0.3f);
  Placement p;
  p.start_sample = 1000;
  p.trimmed_len_samples = snip.samples.size();
  GainMode mode;
  mode.kind = GainMode::Kind::target_snr_db;
  mode.snr_db = 6.0;
  const double g = resolve_gain(mode, 1.0, snip, bg, p);
  double p_s = 0, p_b = 0;
  for (std::size_t i = 0; i < p.trimmed_len_samples; ++i) {
    p_s += g * snip.samples[i] * g * snip.samples[i];
    const double b = bg.samples[p.start_sample + i];
    p_b += b * b;
  }
  CHECK(10.0 * std::log10(p_s / p_b) == doctest::Approx(6.0).epsilon(1e-6));
}
