#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biosed/audio.hpp"
#include "biosed/common.hpp"

namespace biosed::features {

using audio::AudioClip;

/// Transform parameters. The defaults give exactly 100 frames per second at
/// the 32 kHz canonical rate, so 1-second label segments align to whole
/// frame blocks.
struct FeatureConfig {
  int fft_size = 1024;
  int hop = 320;
  int n_mels = 128;
  double fmin = 50.0;
  double fmax = 14000.0;
  int sample_rate = audio::kCanonicalRate;
  double db_floor = -80.0;
  int segment_window_s = 5;

  int fps() const { return sample_rate / hop; }
  int bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

/// Frames x mel-bands log-power matrix in dB, floored at db_floor.
struct MelSpectrogram {
  MatF values;  // F x n_mels
  int fps = 0;
  FeatureConfig config_echo;
};

/// HTK convention: mel = 2595 * log10(1 + f / 700).
double hz_to_mel(double f);
double mel_to_hz(double mel);

/// Hann-windowed power spectrogram, one row per frame, bins 0..fft_size/2.
/// Frames advance by hop; input shorter than fft_size is zero-padded into a
/// single frame.
MatD stft_power(const AudioClip& clip, const FeatureConfig& cfg);

/// Triangular filters with peak 1, centers equally spaced on the mel scale
/// between mel(fmin) and mel(fmax), each filter's endpoints at its
/// neighbors' centers. Throws ConfigError if a band collapses to an
/// all-zero row (lower n_mels or raise fft resolution).
struct MelFilterbank {
  MatD weights;                 // n_mels x bins
  std::vector<int> first_bin;   // first nonzero column per row
  std::vector<int> last_bin;    // one past the last nonzero column
};
MelFilterbank mel_filterbank(const FeatureConfig& cfg);

/// values = max(10*log10(power . weights^T + 1e-10), db_floor).
MelSpectrogram log_mel(const MatD& power, const MelFilterbank& fb,
                       const FeatureConfig& cfg);

/// Fused pipeline: per-frame FFT -> mel -> dB without keeping the full
/// power matrix in memory. Bit-identical to stft_power + log_mel.
MelSpectrogram mel_spectrogram(const AudioClip& clip,
                               const FeatureConfig& cfg);

/// Per-mel-band mean and standard deviation (dB units) over a training set;
/// std is floored at 1e-6.
struct StandardizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

StandardizationStats compute_stats(const std::vector<const MatF*>& mels);
MatF standardize(const MelSpectrogram& mel, const StandardizationStats& stats);

/// One fixed-length model input: standardized features, frame labels, and a
/// validity mask that is false on zero-padded tail frames.
struct InputWindow {
  MatF features;   // (segment_window_s * fps) x n_mels
  MatU8 targets;   // same frame count x C
  std::vector<std::uint8_t> valid;  // per frame
  std::string recording_id;
  std::size_t start_segment = 0;
};

/// Consecutive non-overlapping windows starting at frame 0; the final
/// partial window is zero-padded with its mask cleared. frame_labels must
/// cover exactly the valid frames.
std::vector<InputWindow> window_into_inputs(const MatF& standardized,
                                            const MatU8& frame_labels,
                                            const FeatureConfig& cfg,
                                            const std::string& recording_id);

/// Feature cache: 16-byte header (magic "BSEDMELC", u16 version, u16 fps,
/// u32 frames... see implementation) followed by row-major float32 LE
/// values, plus a sidecar JSON echoing the config.
void write_feature_cache(const std::filesystem::path& path,
                         const MelSpectrogram& mel);
MelSpectrogram read_feature_cache(const std::filesystem::path& path);

}  // namespace biosed::features
