#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biosed/common.hpp"

namespace biosed::audio {

/// Every pool and background clip is resampled to this rate on load. Bird
/// energy sits below ~12 kHz, leaving comfortable Nyquist margin at 32 kHz.
inline constexpr int kCanonicalRate = 32000;

/// Mono waveform with amplitudes in [-1, 1]. Immutable by convention once
/// constructed; safe to share across threads.
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kCanonicalRate;
  std::string source_id;

  double duration_seconds() const {
    return sample_rate > 0
               ? static_cast<double>(samples.size()) / sample_rate
               : 0.0;
  }
};

/// Parses a RIFF/WAVE byte stream. Accepts PCM16 and IEEE float32, any
/// sample rate, one or more channels (averaged to mono). Throws DataError
/// on malformed headers, unsupported encodings, or truncated data chunks.
AudioClip decode_wav(const std::vector<std::uint8_t>& bytes,
                     const std::string& source_id = "");

/// Emits PCM16 little-endian mono. decode_wav(encode_wav(c)) reproduces
/// samples within 1/32768 per sample.
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);

AudioClip read_wav_file(const std::filesystem::path& path);
void write_wav_file(const std::filesystem::path& path, const AudioClip& clip);

/// Per-sample arithmetic mean across channels. Channels must be non-empty
/// and equal length.
AudioClip to_mono(const std::vector<std::vector<float>>& channels,
                  int sample_rate, const std::string& source_id = "");

/// Linear-interpolation resampling. Output length is
/// round(len * target / source).
AudioClip resample(const AudioClip& clip, int target_rate);

/// The exact output length resample() produces, shared with the planning
/// code so sample counts derived from manifests always match loaded clips.
inline std::size_t resampled_length(std::size_t n, int src_rate,
                                    int dst_rate) {
  if (src_rate == dst_rate) return n;
  const double scaled =
      static_cast<double>(n) * static_cast<double>(dst_rate) / src_rate;
  return static_cast<std::size_t>(scaled + 0.5);
}

/// Hard clamp to [-1, 1] in place; applied after any mixing step.
void clamp_amplitude(std::vector<float>& samples);

/// read + to-mono + resample to the canonical rate + clamp, in one step.
AudioClip load_canonical(const std::filesystem::path& path);

/// Duration in seconds read from the WAV header alone (no sample decode).
double wav_file_duration_seconds(const std::filesystem::path& path);

}  // namespace biosed::audio
