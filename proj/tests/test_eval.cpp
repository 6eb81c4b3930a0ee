#include <doctest.h>

#include <cmath>

#include "biosed/eval.hpp"
#include "support/toygen.hpp"

using namespace biosed;
using namespace biosed::eval;

namespace {

// Independent double-loop counter.
ConfusionCounts brute_counts(const MatU8& pred, const MatU8& truth) {
  ConfusionCounts c;
  for (std::size_t t = 0; t < pred.rows; ++t) {
    for (std::size_t s = 0; s < pred.cols; ++s) {
      const bool p = pred(t, s), y = truth(t, s);
      if (p && y) c.tp++;
      if (p && !y) c.fp++;
      if (!p && y) c.fn++;
      if (!p && !y) c.tn++;
    }
  }
  return c;
}

MatF random_probs(std::size_t rows, std::size_t cols, Rng& rng) {
  MatF m(rows, cols);
  for (auto& v : m.data) v = static_cast<float>(rng.uniform());
  return m;
}

MatU8 random_binary(std::size_t rows, std::size_t cols, Rng& rng,
                    double p1 = 0.3) {
  MatU8 m(rows, cols);
  for (auto& v : m.data) v = rng.uniform() < p1 ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("binarize") {
  MatF probs(3, 1);
  probs(0, 0) = 0.1f;
  probs(1, 0) = 0.5f;
  probs(2, 0) = 0.84f;
  const auto b = binarize(probs, 0.5);
  CHECK(b.data == std::vector<std::uint8_t>{0, 1, 1});

  // Model probabilities live strictly inside (0,1); the extremes of the
  // threshold range saturate.
  MatF sig(2, 2);
  sig.data = {1e-6f, 0.4f, 0.9f, 1.0f - 1e-6f};
  const auto all1 = binarize(sig, 0.0);
  for (auto v : all1.data) CHECK(v == 1);
  const auto all0 = binarize(sig, 1.0);
  for (auto v : all0.data) CHECK(v == 0);
}

TEST_CASE("confusion") {
  Rng rng(60);
  SUBCASE("perfect prediction has no errors") {
    const auto truth = random_binary(20, 6, rng);
    const auto rep = confusion(truth, truth);
    CHECK(rep.pooled.fp == 0);
    CHECK(rep.pooled.fn == 0);
    CHECK(rep.pooled.total() == 120);
  }
  SUBCASE("all ones vs all zeros is pure false positives") {
    MatU8 ones(7, 3, 1), zeros(7, 3, 0);
    const auto rep = confusion(ones, zeros);
    CHECK(rep.pooled.fp == 21);
    CHECK(rep.pooled.tp == 0);
  }
  SUBCASE("random 20x6 equals the brute-force double loop") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto pred = random_binary(20, 6, rng, 0.5);
      const auto truth = random_binary(20, 6, rng, 0.3);
      const auto rep = confusion(pred, truth);
      const auto slow = brute_counts(pred, truth);
      CHECK(rep.pooled.tp == slow.tp);
      CHECK(rep.pooled.fp == slow.fp);
      CHECK(rep.pooled.fn == slow.fn);
      CHECK(rep.pooled.tn == slow.tn);
      // Micro pooled counts are the per-species sums.
      ConfusionCounts sum;
      for (const auto& cc : rep.per_species) sum += cc;
      CHECK(sum.tp == rep.pooled.tp);
      CHECK(sum.tn == rep.pooled.tn);
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(confusion(MatU8(3, 2), MatU8(2, 3)), DataError);
  }
}

TEST_CASE("metrics") {
  SUBCASE("the published operating point: P=0.67 R=0.80 -> F1=0.73") {
    // Reconstruct counts giving exactly these rates.
    ConfusionCounts c;
    c.tp = 67 * 4;   // P = 268/400
    c.fp = 33 * 4;
    c.fn = 67;       // R = 268/335 = 0.8
    const auto m = metrics(c);
    REQUIRE(m.precision);
    REQUIRE(m.recall);
    REQUIRE(m.f1);
    CHECK(*m.precision == doctest::Approx(0.67));
    CHECK(*m.recall == doctest::Approx(0.80));
    CHECK(*m.f1 == doctest::Approx(0.73).epsilon(0.007));
    CHECK(std::abs(*m.f1 - 2.0 * 0.67 * 0.80 / (0.67 + 0.80)) < 1e-9);
  }
  SUBCASE("degenerate zero counts use the undefined marker") {
    ConfusionCounts c;
    c.tn = 10;
    const auto m = metrics(c);
    CHECK(!m.precision);
    CHECK(!m.recall);
    CHECK(!m.f1);
    CHECK(m.accuracy == 1.0);
  }
  SUBCASE("hand-counted example") {
    ConfusionCounts c;
    c.tp = 2;
    c.fp = 1;
    c.fn = 2;
    c.tn = 5;
    const auto m = metrics(c);
    CHECK(*m.precision == doctest::Approx(2.0 / 3.0));
    CHECK(*m.recall == doctest::Approx(0.5));
    CHECK(*m.f1 == doctest::Approx(4.0 / 7.0));
  }
  SUBCASE("all sixteen single-cell cases") {
    for (int p = 0; p <= 1; ++p) {
      for (int y = 0; y <= 1; ++y) {
        MatU8 pred(1, 1, static_cast<std::uint8_t>(p));
        MatU8 truth(1, 1, static_cast<std::uint8_t>(y));
        const auto rep = confusion(pred, truth);
        CHECK(rep.pooled.tp == static_cast<std::uint64_t>(p && y));
        CHECK(rep.pooled.fp == static_cast<std::uint64_t>(p && !y));
        CHECK(rep.pooled.fn == static_cast<std::uint64_t>(!p && y));
        CHECK(rep.pooled.tn == static_cast<std::uint64_t>(!p && !y));
      }
    }
  }
}

TEST_CASE("sweep") {
  Rng rng(61);
  SUBCASE("recall is non-increasing along the default grid") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto probs = random_probs(50, 6, rng);
      const auto truth = random_binary(50, 6, rng);
      const auto curve = sweep(probs, truth, default_threshold_grid());
      double prev = 1.0;
      std::uint64_t prev_fp = UINT64_MAX;
      for (const auto& pt : curve.points) {
        const double r = pt.pooled.recall.value_or(prev);
        CHECK(r <= prev + 1e-12);
        prev = std::min(prev, r);
        const auto rep =
            confusion(binarize(probs, pt.threshold), truth);
        CHECK(rep.pooled.fp <= prev_fp);
        prev_fp = rep.pooled.fp;
      }
    }
  }
  SUBCASE("a single point equals the direct metrics call") {
    const auto probs = random_probs(30, 4, rng);
    const auto truth = random_binary(30, 4, rng);
    const auto curve = sweep(probs, truth, {0.5});
    const auto direct = metrics(confusion(binarize(probs, 0.5), truth).pooled);
    REQUIRE(curve.points.size() == 1);
    CHECK(curve.points[0].pooled.f1.value_or(-1) == direct.f1.value_or(-1));
  }
  SUBCASE("the whole curve equals a brute-force recomputation") {
    const auto probs = random_probs(50, 6, rng);
    const auto truth = random_binary(50, 6, rng);
    std::vector<double> grid(100);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      grid[i] = static_cast<double>(i) / 99.0;
    }
    const auto curve = sweep(probs, truth, grid);
    double best = -1, best_tau = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      MatU8 pred(50, 6);
      for (std::size_t k = 0; k < pred.data.size(); ++k) {
        pred.data[k] =
            static_cast<double>(probs.data[k]) >= grid[i] ? 1 : 0;
      }
      const auto m = metrics(brute_counts(pred, truth));
      CHECK(curve.points[i].pooled.accuracy ==
            doctest::Approx(m.accuracy));
      CHECK(curve.points[i].pooled.f1.has_value() == m.f1.has_value());
      if (m.f1 && *m.f1 > best) {
        best = *m.f1;
        best_tau = grid[i];
      }
    }
    CHECK(curve.best_f1 == doctest::Approx(best));
    CHECK(curve.best_threshold == doctest::Approx(best_tau));
  }
  SUBCASE("unsorted thresholds are rejected") {
    const auto probs = random_probs(5, 2, rng);
    const auto truth = random_binary(5, 2, rng);
    CHECK_THROWS_AS(sweep(probs, truth, {0.5, 0.2}), ConfigError);
  }
}

TEST_CASE("binarize monotonicity: higher threshold is a subset") {
  Rng rng(62);
  const auto probs = random_probs(40, 5, rng);
  const auto lo = binarize(probs, 0.3);
  const auto hi = binarize(probs, 0.7);
  for (std::size_t i = 0; i < lo.data.size(); ++i) {
    CHECK(hi.data[i] <= lo.data[i]);
  }
}

TEST_CASE("evaluate_recording") {
  const auto species = testsupport::toy_species();
  SUBCASE("empty truth, empty predictions") {
    MatF probs(10, 6, 0.01f);
    labelgrid::LabelTrack truth;
    truth.recording_duration_s = 10.0;
    const auto ev = evaluate_recording(probs, truth, species, 0.5);
    CHECK(ev.counts.pooled.tn == 60);
    CHECK(ev.pooled.accuracy == 1.0);
    CHECK(!ev.pooled.precision);
    CHECK(!ev.pooled.recall);
  }
  SUBCASE("perfect predictions score F1 1 for present species") {
    labelgrid::LabelTrack truth;
    truth.recording_duration_s = 10.0;
    truth.events.push_back({2, 1.0, 4.0});
    truth.events.push_back({5, 6.0, 9.0});
    const auto m = labelgrid::to_segment_matrix(truth, 6);
    MatF probs(10, 6);
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
      probs.data[i] = m.data[i] ? 0.99f : 0.01f;
    }
    const auto ev = evaluate_recording(probs, truth, species, 0.5);
    CHECK(*ev.per_species[2].f1 == 1.0);
    CHECK(*ev.per_species[5].f1 == 1.0);
    CHECK(*ev.pooled.f1 == 1.0);
    CHECK(!ev.per_species[0].recall);  // absent species: undefined
  }
  SUBCASE("scripted fixture matches a hand-audited table") {
    // 6 seconds, 2 species of interest; predictions planted to produce
    // tp=2 fp=1 fn=1 for species 0 and tp=1 fp=0 fn=2 for species 1.
    SpeciesList two;
    two.entries = {species.entries[0], species.entries[1]};
    labelgrid::LabelTrack truth;
    truth.recording_duration_s = 6.0;
    truth.events.push_back({0, 0.0, 3.0});   // seconds 0,1,2
    truth.events.push_back({1, 2.0, 5.0});   // seconds 2,3,4
    MatF probs(6, 2, 0.0f);
    probs(0, 0) = 0.9f;  // tp
    probs(1, 0) = 0.9f;  // tp
    probs(4, 0) = 0.9f;  // fp
    probs(2, 1) = 0.9f;  // tp
    const auto ev = evaluate_recording(probs, truth, two, 0.5);
    CHECK(ev.counts.per_species[0].tp == 2);
    CHECK(ev.counts.per_species[0].fp == 1);
    CHECK(ev.counts.per_species[0].fn == 1);
    CHECK(ev.counts.per_species[0].tn == 2);
    CHECK(ev.counts.per_species[1].tp == 1);
    CHECK(ev.counts.per_species[1].fp == 0);
    CHECK(ev.counts.per_species[1].fn == 2);
    CHECK(*ev.pooled.precision == doctest::Approx(3.0 / 4.0));
    CHECK(*ev.pooled.recall == doctest::Approx(3.0 / 6.0));
  }
  SUBCASE("species list mismatch is rejected") {
    MatF probs(5, 3);
    labelgrid::LabelTrack truth;
    truth.recording_duration_s = 5.0;
    CHECK_THROWS_AS(evaluate_recording(probs, truth, species, 0.5),
                    DataError);
  }
}
