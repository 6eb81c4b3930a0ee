#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>

#include "biosed/features.hpp"

using namespace biosed;
using namespace biosed::features;
using audio::AudioClip;

namespace {

FeatureConfig small_cfg() {
  FeatureConfig cfg;
  cfg.fft_size = 256;
  cfg.hop = 64;
  cfg.sample_rate = 6400;  // 100 fps
  cfg.n_mels = 16;
  cfg.fmin = 50;
  cfg.fmax = 3000;
  return cfg;
}

// O(N^2) DFT oracle over an explicitly Hann-windowed frame.
std::vector<double> naive_frame_power(const std::vector<double>& frame) {
  const std::size_t n = frame.size();
  std::vector<double> windowed(n);
  for (std::size_t i = 0; i < n; ++i) {
    windowed[i] = frame[i] *
                  (0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                        static_cast<double>(n)));
  }
  std::vector<double> power(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const double ang = -2.0 * M_PI * static_cast<double>(k) *
                         static_cast<double>(i) / static_cast<double>(n);
      acc += windowed[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    power[k] = std::norm(acc);
  }
  return power;
}

AudioClip clip_of(std::vector<float> samples, int rate) {
  AudioClip clip;
  clip.samples = std::move(samples);
  clip.sample_rate = rate;
  return clip;
}

}  // namespace

TEST_CASE("hz_to_mel") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(hz_to_mel(700.0) == doctest::Approx(781.17).epsilon(1e-4));
  double prev = -1.0;
  for (double f = 0; f <= 16000; f += 250) {
    const double m = hz_to_mel(f);
    CHECK(m > prev);
    prev = m;
    CHECK(mel_to_hz(m) == doctest::Approx(f).epsilon(1e-9));
  }
}

TEST_CASE("stft_power: zero input gives zero power") {
  FeatureConfig cfg;
  const auto power =
      stft_power(clip_of(std::vector<float>(4096, 0.0f), 32000), cfg);
  CHECK(power.rows == (4096 - 1024) / 320 + 1);
  CHECK(power.cols == 513);
  for (double v : power.data) CHECK(v == 0.0);
}

TEST_CASE("stft_power: bin-centered sinusoid peaks at its bin") {
  FeatureConfig cfg;
  const int k = 40;  // bin 40 = 1250 Hz at 32 kHz / 1024
  std::vector<float> samples(2048);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i] = static_cast<float>(std::sin(
        2.0 * M_PI * k * static_cast<double>(i) / 1024.0));
  }
  const auto power = stft_power(clip_of(samples, 32000), cfg);
  for (std::size_t f = 0; f < power.rows; ++f) {
    std::size_t argmax = 0;
    for (std::size_t b = 1; b < power.cols; ++b) {
      if (power(f, b) > power(f, argmax)) argmax = b;
    }
    CHECK(argmax == static_cast<std::size_t>(k));
    // Off-bin leakage below -30 dB of the peak outside the main lobe.
    const double peak = power(f, static_cast<std::size_t>(k));
    for (std::size_t b = 0; b < power.cols; ++b) {
      if (b + 3 < static_cast<std::size_t>(k) ||
          b > static_cast<std::size_t>(k) + 3) {
        CHECK(power(f, b) < peak * 1e-3);
      }
    }
  }
}

TEST_CASE("stft_power matches the naive dft oracle on random frames") {
  Rng rng(31337);
  FeatureConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<float> samples(1024);
    std::vector<double> frame(1024);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      samples[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
      frame[i] = samples[i];
    }
    const auto power = stft_power(clip_of(samples, 32000), cfg);
    const auto oracle = naive_frame_power(frame);
    REQUIRE(power.rows == 1);
    double max_rel = 0;
    double peak = 0;
    for (double v : oracle) peak = std::max(peak, v);
    for (std::size_t b = 0; b < power.cols; ++b) {
      max_rel = std::max(max_rel,
                         std::abs(power(0, b) - oracle[b]) / peak);
    }
    CHECK(max_rel < 1e-5);
  }
}

TEST_CASE("stft_power: Parseval energy identity") {
  Rng rng(4);
  FeatureConfig cfg;
  std::vector<float> samples(1024);
  std::vector<double> frame(1024);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  double time_energy = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double w =
        0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / 1024.0);
    time_energy += (samples[i] * w) * (samples[i] * w);
  }
  const auto power = stft_power(clip_of(samples, 32000), cfg);
  // One-sided spectrum: double the interior bins.
  double freq_energy = power(0, 0) + power(0, power.cols - 1);
  for (std::size_t b = 1; b + 1 < power.cols; ++b) {
    freq_energy += 2.0 * power(0, b);
  }
  freq_energy /= 1024.0;
  CHECK(std::abs(freq_energy - time_energy) / time_energy < 1e-6);
}

TEST_CASE("stft_power: input shorter than fft_size zero-pads one frame") {
  FeatureConfig cfg;
  const auto power =
      stft_power(clip_of(std::vector<float>(100, 0.5f), 32000), cfg);
  CHECK(power.rows == 1);
}

TEST_CASE("mel_filterbank structure") {
  const auto cfg = small_cfg();
  const auto fb = mel_filterbank(cfg);
  REQUIRE(fb.weights.rows == 16);
  REQUIRE(fb.weights.cols == 129);

  SUBCASE("rows are nonnegative with nonempty support") {
    for (std::size_t m = 0; m < fb.weights.rows; ++m) {
      double sum = 0;
      for (std::size_t b = 0; b < fb.weights.cols; ++b) {
        CHECK(fb.weights(m, b) >= 0.0);
        sum += fb.weights(m, b);
      }
      CHECK(sum > 0.0);
    }
  }
  SUBCASE("interior bins between first and last centers are covered") {
    // Centers sit at mel grid points 1..n_mels of n_mels+2.
    const double m_lo = hz_to_mel(cfg.fmin);
    const double m_hi = hz_to_mel(cfg.fmax);
    const double first_center =
        mel_to_hz(m_lo + (m_hi - m_lo) * 1.0 / (cfg.n_mels + 1));
    const double last_center =
        mel_to_hz(m_lo + (m_hi - m_lo) * cfg.n_mels / (cfg.n_mels + 1));
    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
    for (std::size_t b = 0; b < fb.weights.cols; ++b) {
      const double f = static_cast<double>(b) * bin_hz;
      if (f > first_center && f < last_center) {
        double col = 0;
        for (std::size_t m = 0; m < fb.weights.rows; ++m) {
          col += fb.weights(m, b);
        }
        CHECK(col > 0.0);
      }
    }
  }
  SUBCASE("a center aligned to a bin peaks at exactly 1") {
    // Construct a config whose filter centers land on integer bins: linear
    // spacing happens when fmin/fmax span maps linearly; instead verify the
    // sampled peak is 1 wherever a center coincides with a bin frequency
    // within numerical tolerance.
    FeatureConfig cfg2 = small_cfg();
    cfg2.n_mels = 2;
    const auto fb2 = mel_filterbank(cfg2);
    for (std::size_t m = 0; m < fb2.weights.rows; ++m) {
      double peak = 0;
      for (std::size_t b = 0; b < fb2.weights.cols; ++b) {
        peak = std::max(peak, fb2.weights(m, b));
      }
      CHECK(peak <= 1.0);
      CHECK(peak > 0.5);  // wide triangles sample near their apex
    }
  }
}

TEST_CASE("mel_filterbank: degenerate band raises config error") {
  FeatureConfig cfg;
  cfg.fft_size = 64;
  cfg.hop = 16;
  cfg.sample_rate = 32000;
  cfg.n_mels = 40;  // far too many bands for 33 bins at this span
  cfg.fmin = 50;
  cfg.fmax = 400;
  CHECK_THROWS_AS(mel_filterbank(cfg), ConfigError);
}

TEST_CASE("log_mel") {
  const auto cfg = small_cfg();
  const auto fb = mel_filterbank(cfg);
  SUBCASE("zero power floors at db_floor") {
    MatD power(3, static_cast<std::size_t>(cfg.bins()), 0.0);
    const auto mel = log_mel(power, fb, cfg);
    for (float v : mel.values.data) CHECK(v == doctest::Approx(-80.0));
  }
  SUBCASE("doubling power adds ~3.0103 dB to unfloored cells") {
    Rng rng(8);
    MatD power(4, static_cast<std::size_t>(cfg.bins()));
    for (auto& v : power.data) v = rng.uniform(0.1, 2.0);
    MatD doubled = power;
    for (auto& v : doubled.data) v *= 2.0;
    const auto a = log_mel(power, fb, cfg);
    const auto b = log_mel(doubled, fb, cfg);
    for (std::size_t i = 0; i < a.values.data.size(); ++i) {
      if (a.values.data[i] > -79.0) {
        CHECK(b.values.data[i] - a.values.data[i] ==
              doctest::Approx(10.0 * std::log10(2.0)).epsilon(1e-3));
      }
    }
  }
  SUBCASE("never below the floor") {
    Rng rng(9);
    MatD power(2, static_cast<std::size_t>(cfg.bins()));
    for (auto& v : power.data) v = rng.uniform(0.0, 1e-9);
    const auto mel = log_mel(power, fb, cfg);
    for (float v : mel.values.data) CHECK(v >= -80.0f);
  }
}

TEST_CASE("fused mel_spectrogram equals stft_power + log_mel bit for bit") {
  Rng rng(12);
  const auto cfg = small_cfg();
  std::vector<float> samples(2000);
  for (auto& s : samples) s = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto clip = clip_of(samples, cfg.sample_rate);
  const auto fused = mel_spectrogram(clip, cfg);
  const auto staged = log_mel(stft_power(clip, cfg), mel_filterbank(cfg), cfg);
  CHECK(fused.values.data == staged.values.data);
  // Determinism: recompute, expect identical bits.
  const auto again = mel_spectrogram(clip, cfg);
  CHECK(fused.values.data == again.values.data);
}

TEST_CASE("standardize") {
  Rng rng(13);
  MelSpectrogram mel;
  mel.values = MatF(50, 8);
  for (auto& v : mel.values.data) {
    v = static_cast<float>(rng.uniform(-40.0, 0.0));
  }
  SUBCASE("self-standardization yields mean 0, std 1") {
    const auto stats = compute_stats({&mel.values});
    const auto out = standardize(mel, stats);
    for (std::size_t b = 0; b < out.cols; ++b) {
      double sum = 0, sumsq = 0;
      for (std::size_t f = 0; f < out.rows; ++f) {
        sum += out(f, b);
        sumsq += static_cast<double>(out(f, b)) * out(f, b);
      }
      const double mean = sum / static_cast<double>(out.rows);
      const double var = sumsq / static_cast<double>(out.rows) - mean * mean;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::sqrt(std::max(var, 0.0)) == doctest::Approx(1.0)
                                                 .epsilon(1e-4));
    }
  }
  SUBCASE("identity stats are the identity") {
    StandardizationStats stats;
    stats.mean.assign(8, 0.0);
    stats.stddev.assign(8, 1.0);
    const auto out = standardize(mel, stats);
    CHECK(out.data == mel.values.data);
  }
  SUBCASE("constant band with floored std maps to zero") {
    MelSpectrogram flat;
    flat.values = MatF(10, 2, -20.0f);
    const auto stats = compute_stats({&flat.values});
    CHECK(stats.stddev[0] == doctest::Approx(1e-6));
    const auto out = standardize(flat, stats);
    for (float v : out.data) CHECK(v == 0.0f);
  }
  SUBCASE("band count mismatch is an error") {
    StandardizationStats stats;
    stats.mean.assign(4, 0.0);
    stats.stddev.assign(4, 1.0);
    CHECK_THROWS_AS(standardize(mel, stats), DataError);
  }
}

TEST_CASE("window_into_inputs") {
  FeatureConfig cfg = small_cfg();
  cfg.segment_window_s = 5;  // 500 frames at 100 fps
  SUBCASE("10 s at 100 fps gives two full windows") {
    MatF feat(1000, 4, 1.0f);
    MatU8 labels(1000, 2, 1);
    const auto ws = window_into_inputs(feat, labels, cfg, "r");
    REQUIRE(ws.size() == 2);
    for (const auto& w : ws) {
      CHECK(w.features.rows == 500);
      for (auto v : w.valid) CHECK(v == 1);
    }
    CHECK(ws[1].start_segment == 5);
  }
  SUBCASE("7 s gives one full and one padded window") {
    MatF feat(700, 4, 1.0f);
    MatU8 labels(700, 2, 1);
    const auto ws = window_into_inputs(feat, labels, cfg, "r");
    REQUIRE(ws.size() == 2);
    int valid = 0;
    for (auto v : ws[1].valid) valid += v;
    CHECK(valid == 200);
    // Pad frames carry zero features and zero labels.
    for (std::size_t f = 200; f < 500; ++f) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(ws[1].features(f, c) == 0.0f);
      for (std::size_t c = 0; c < 2; ++c) CHECK(ws[1].targets(f, c) == 0);
    }
  }
  SUBCASE("empty recording gives no windows") {
    MatF feat(0, 4);
    MatU8 labels(0, 2);
    CHECK(window_into_inputs(feat, labels, cfg, "r").empty());
  }
  SUBCASE("windowing is a partition of the valid frames") {
    Rng rng(3);
    MatF feat(730, 3);
    for (auto& v : feat.data) v = static_cast<float>(rng.uniform(-1, 1));
    MatU8 labels(730, 2);
    for (auto& v : labels.data) v = rng.uniform() < 0.3 ? 1 : 0;
    const auto ws = window_into_inputs(feat, labels, cfg, "r");
    std::size_t covered = 0;
    for (const auto& w : ws) {
      for (std::size_t f = 0; f < w.features.rows; ++f) {
        if (!w.valid[f]) continue;
        const std::size_t global = covered;
        for (std::size_t c = 0; c < feat.cols; ++c) {
          CHECK(w.features(f, c) == feat(global, c));
        }
        for (std::size_t c = 0; c < labels.cols; ++c) {
          CHECK(w.targets(f, c) == labels(global, c));
        }
        ++covered;
      }
    }
    CHECK(covered == 730);
  }
}

TEST_CASE("feature cache round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "biosed_feat_t";
  fs::create_directories(dir);
  Rng rng(21);
  MelSpectrogram mel;
  mel.fps = 100;
  mel.config_echo = small_cfg();
  mel.values = MatF(37, 16);
  for (auto& v : mel.values.data) {
    v = static_cast<float>(rng.uniform(-80.0, 0.0));
  }
  write_feature_cache(dir / "x.melcache", mel);
  const auto back = read_feature_cache(dir / "x.melcache");
  CHECK(back.values.data == mel.values.data);
  CHECK(back.fps == 100);
  CHECK(back.config_echo.n_mels == 16);
  fs::remove_all(dir);
}

TEST_CASE("feature config validation") {
  FeatureConfig cfg;
  cfg.hop = 333;  // does not divide 32000
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = FeatureConfig{};
  cfg.fmax = 20000;  // above nyquist
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = FeatureConfig{};
  cfg.fft_size = 1000;  // not a power of two
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
