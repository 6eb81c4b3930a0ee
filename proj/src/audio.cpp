#include "biosed/audio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace biosed::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

struct FmtInfo {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits_per_sample = 0;
};

struct WavLayout {
  FmtInfo fmt;
  std::size_t data_offset = 0;
  std::size_t data_size = 0;
};

// Walks the chunk list and validates the fmt chunk field by field. Shared by
// the full decoder and the header-only duration probe.
WavLayout parse_layout(const std::uint8_t* p, std::size_t n,
                       const std::string& source_id) {
  auto fail = [&](const std::string& what) -> void {
    throw DataError("wav: " + what +
                    (source_id.empty() ? "" : " (" + source_id + ")"));
  };
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 ||
      std::memcmp(p + 8, "WAVE", 4) != 0) {
    fail("malformed header: not a RIFF/WAVE stream");
  }
  WavLayout layout;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const char* id = reinterpret_cast<const char*>(p + pos);
    const std::uint32_t size = read_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > n) fail("malformed header: fmt chunk too short");
      layout.fmt.format = read_u16(p + body);
      layout.fmt.channels = read_u16(p + body + 2);
      layout.fmt.sample_rate = read_u32(p + body + 4);
      // byte rate and block align at +8/+12 are derived fields; not trusted.
      layout.fmt.bits_per_sample = read_u16(p + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) fail("malformed header: data chunk precedes fmt");
      layout.data_offset = body;
      layout.data_size = size;
      if (body + size > n) {
        fail("truncated data chunk: declared " + std::to_string(size) +
             " bytes, " + std::to_string(n - body) + " available");
      }
      return layout;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_fmt) fail("malformed header: missing fmt chunk");
  fail("malformed header: missing data chunk");
  return layout;  // unreachable
}

void validate_fmt(const FmtInfo& fmt, const std::string& source_id) {
  auto fail = [&](const std::string& what) -> void {
    throw DataError("wav: " + what +
                    (source_id.empty() ? "" : " (" + source_id + ")"));
  };
  const bool pcm16 = fmt.format == kFormatPcm && fmt.bits_per_sample == 16;
  const bool f32 = fmt.format == kFormatFloat && fmt.bits_per_sample == 32;
  if (!pcm16 && !f32) {
    fail("unsupported encoding: format=" + std::to_string(fmt.format) +
         " bits=" + std::to_string(fmt.bits_per_sample) +
         " (PCM16 or float32 required)");
  }
  if (fmt.channels == 0) fail("malformed header: zero channels");
  if (fmt.sample_rate == 0) fail("malformed header: zero sample rate");
}

}  // namespace

AudioClip decode_wav(const std::vector<std::uint8_t>& bytes,
                     const std::string& source_id) {
  const WavLayout layout = parse_layout(bytes.data(), bytes.size(), source_id);
  validate_fmt(layout.fmt, source_id);
  const FmtInfo& fmt = layout.fmt;
  const std::size_t bytes_per_sample = fmt.bits_per_sample / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  const std::size_t frames = frame_bytes ? layout.data_size / frame_bytes : 0;
  const std::uint8_t* d = bytes.data() + layout.data_offset;

  std::vector<std::vector<float>> channels(
      fmt.channels, std::vector<float>(frames));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::uint16_t ch = 0; ch < fmt.channels; ++ch) {
      const std::uint8_t* s = d + f * frame_bytes + ch * bytes_per_sample;
      if (fmt.format == kFormatPcm) {
        const auto raw = static_cast<std::int16_t>(read_u16(s));
        channels[ch][f] = static_cast<float>(raw) / 32768.0f;
      } else {
        float v;
        std::memcpy(&v, s, sizeof v);
        channels[ch][f] = v;
      }
    }
  }
  if (fmt.channels == 1) {
    AudioClip clip;
    clip.samples = std::move(channels[0]);
    clip.sample_rate = static_cast<int>(fmt.sample_rate);
    clip.source_id = source_id;
    return clip;
  }
  return to_mono(channels, static_cast<int>(fmt.sample_rate), source_id);
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * 2;
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    double q = std::nearbyint(static_cast<double>(s) * 32768.0);
    if (q > 32767.0) q = 32767.0;
    if (q < -32768.0) q = -32768.0;
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

AudioClip read_wav_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("wav: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

void write_wav_file(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("wav: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

AudioClip to_mono(const std::vector<std::vector<float>>& channels,
                  int sample_rate, const std::string& source_id) {
  if (channels.empty()) throw DataError("to_mono: no channels");
  const std::size_t n = channels[0].size();
  for (const auto& ch : channels) {
    if (ch.size() != n) throw DataError("to_mono: ragged channel lengths");
  }
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.source_id = source_id;
  if (channels.size() == 1) {
    clip.samples = channels[0];
    return clip;
  }
  clip.samples.resize(n);
  const float inv = 1.0f / static_cast<float>(channels.size());
  for (std::size_t i = 0; i < n; ++i) {
    float acc = 0.0f;
    for (const auto& ch : channels) acc += ch[i];
    clip.samples[i] = acc * inv;
  }
  return clip;
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be > 0");
  if (target_rate == clip.sample_rate) return clip;
  AudioClip out;
  out.sample_rate = target_rate;
  out.source_id = clip.source_id;
  if (clip.samples.empty()) return out;
  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const std::size_t out_len =
      resampled_length(clip.samples.size(), clip.sample_rate, target_rate);
  out.samples.resize(out_len);
  const std::size_t last = clip.samples.size() - 1;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) / ratio;
    std::size_t i0 = static_cast<std::size_t>(pos);
    if (i0 > last) i0 = last;
    const std::size_t i1 = i0 < last ? i0 + 1 : last;
    const double frac = pos - static_cast<double>(i0);
    const double v = clip.samples[i0] +
                     frac * (static_cast<double>(clip.samples[i1]) -
                             clip.samples[i0]);
    out.samples[i] = static_cast<float>(v);
  }
  return out;
}

void clamp_amplitude(std::vector<float>& samples) {
  for (float& s : samples) {
    if (s > 1.0f) s = 1.0f;
    if (s < -1.0f) s = -1.0f;
  }
}

AudioClip load_canonical(const std::filesystem::path& path) {
  AudioClip clip = read_wav_file(path);
  clip = resample(clip, kCanonicalRate);
  clamp_amplitude(clip.samples);
  return clip;
}

double wav_file_duration_seconds(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("wav: cannot open " + path.string());
  // Layout metadata lives in the first few chunks; 64 KiB covers any sane
  // header while skipping the bulk of the data chunk.
  std::vector<std::uint8_t> head(65536);
  in.read(reinterpret_cast<char*>(head.data()),
          static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));

  // Re-parse leniently: the data chunk is allowed to extend beyond the
  // buffer, so clamp the declared size to the real file size.
  const auto file_size =
      static_cast<std::size_t>(std::filesystem::file_size(path));
  const WavLayout layout = [&] {
    WavLayout l;
    bool have_fmt = false;
    if (head.size() < 12 || std::memcmp(head.data(), "RIFF", 4) != 0 ||
        std::memcmp(head.data() + 8, "WAVE", 4) != 0) {
      throw DataError("wav: malformed header: not a RIFF/WAVE stream (" +
                      path.string() + ")");
    }
    std::size_t pos = 12;
    while (pos + 8 <= head.size()) {
      const char* id = reinterpret_cast<const char*>(head.data() + pos);
      const std::uint32_t size = read_u32(head.data() + pos + 4);
      const std::size_t body = pos + 8;
      if (std::memcmp(id, "fmt ", 4) == 0) {
        if (size < 16 || body + 16 > head.size()) {
          throw DataError("wav: malformed header: fmt chunk too short (" +
                          path.string() + ")");
        }
        l.fmt.format = read_u16(head.data() + body);
        l.fmt.channels = read_u16(head.data() + body + 2);
        l.fmt.sample_rate = read_u32(head.data() + body + 4);
        l.fmt.bits_per_sample = read_u16(head.data() + body + 14);
        have_fmt = true;
      } else if (std::memcmp(id, "data", 4) == 0) {
        if (!have_fmt) {
          throw DataError("wav: malformed header: data chunk precedes fmt (" +
                          path.string() + ")");
        }
        l.data_offset = body;
        l.data_size = std::min<std::size_t>(size, file_size - body);
        return l;
      }
      pos = body + size + (size & 1);
    }
    throw DataError("wav: malformed header: missing data chunk (" +
                    path.string() + ")");
  }();
  validate_fmt(layout.fmt, path.string());
  const std::size_t frame_bytes =
      (layout.fmt.bits_per_sample / 8) * layout.fmt.channels;
  const std::size_t frames = frame_bytes ? layout.data_size / frame_bytes : 0;
  return static_cast<double>(frames) / layout.fmt.sample_rate;
}

}  // namespace biosed::audio
