#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "biosed/audio.hpp"
#include "biosed/common.hpp"

using namespace biosed;
using audio::AudioClip;

namespace {

// Hand-rolled header writer, independent of encode_wav, so decoding is
// checked against a second implementation of the RIFF layout.
void push_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back((x >> (8 * i)) & 0xff);
}
void push_u16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

std::vector<std::uint8_t> handmade_pcm16(
    const std::vector<std::vector<std::int16_t>>& channels, int rate) {
  const auto nch = static_cast<std::uint16_t>(channels.size());
  const auto frames = static_cast<std::uint32_t>(channels[0].size());
  const std::uint32_t data_bytes = frames * nch * 2;
  std::vector<std::uint8_t> v;
  v.insert(v.end(), {'R', 'I', 'F', 'F'});
  push_u32(v, 36 + data_bytes);
  v.insert(v.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  push_u32(v, 16);
  push_u16(v, 1);  // PCM
  push_u16(v, nch);
  push_u32(v, static_cast<std::uint32_t>(rate));
  push_u32(v, static_cast<std::uint32_t>(rate) * nch * 2);
  push_u16(v, nch * 2);
  push_u16(v, 16);
  v.insert(v.end(), {'d', 'a', 't', 'a'});
  push_u32(v, data_bytes);
  for (std::uint32_t f = 0; f < frames; ++f) {
    for (std::uint16_t c = 0; c < nch; ++c) {
      push_u16(v, static_cast<std::uint16_t>(channels[c][f]));
    }
  }
  return v;
}

}  // namespace

TEST_CASE("decode_wav: 1 s of 16 kHz zeros") {
  std::vector<std::int16_t> zeros(16000, 0);
  const auto clip = audio::decode_wav(handmade_pcm16({zeros}, 16000));
  CHECK(clip.samples.size() == 16000);
  CHECK(clip.sample_rate == 16000);
  for (float s : clip.samples) CHECK(s == 0.0f);
}

TEST_CASE("decode_wav: PCM16 full-scale sample maps to 32767/32768") {
  const auto clip =
      audio::decode_wav(handmade_pcm16({{32767, -32768, 0, 1}}, 8000));
  CHECK(clip.samples[0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(clip.samples[1] == doctest::Approx(-1.0));
  CHECK(clip.samples[2] == 0.0f);
  CHECK(clip.samples[3] == doctest::Approx(1.0 / 32768.0));
}

TEST_CASE("decode_wav: identical stereo channels fold to either one") {
  std::vector<std::int16_t> ch{100, -200, 300, -400, 500};
  const auto mono = audio::decode_wav(handmade_pcm16({ch}, 8000));
  const auto stereo = audio::decode_wav(handmade_pcm16({ch, ch}, 8000));
  REQUIRE(stereo.samples.size() == mono.samples.size());
  for (std::size_t i = 0; i < mono.samples.size(); ++i) {
    CHECK(stereo.samples[i] == doctest::Approx(mono.samples[i]));
  }
}

TEST_CASE("decode_wav: malformed and truncated input") {
  std::vector<std::uint8_t> junk{'N', 'O', 'P', 'E', 0, 0, 0, 0};
  CHECK_THROWS_AS(audio::decode_wav(junk), DataError);

  auto truncated = handmade_pcm16({{1, 2, 3, 4}}, 8000);
  truncated.resize(truncated.size() - 4);  // data shorter than declared
  CHECK_THROWS_AS(audio::decode_wav(truncated), DataError);

  auto bad_codec = handmade_pcm16({{1, 2}}, 8000);
  bad_codec[20] = 7;  // unsupported compression code
  CHECK_THROWS_AS(audio::decode_wav(bad_codec), DataError);
}

TEST_CASE("encode/decode round trip") {
  SUBCASE("zero clip survives bitwise") {
    AudioClip clip;
    clip.sample_rate = 32000;
    clip.samples.assign(1000, 0.0f);
    const auto back = audio::decode_wav(audio::encode_wav(clip));
    CHECK(back.samples == clip.samples);
  }
  SUBCASE("random samples within quantization error") {
    Rng rng(42);
    AudioClip clip;
    clip.sample_rate = 32000;
    for (int i = 0; i < 5000; ++i) {
      clip.samples.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
    }
    const auto back = audio::decode_wav(audio::encode_wav(clip));
    REQUIRE(back.samples.size() == clip.samples.size());
    double max_err = 0;
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      max_err = std::max(max_err, std::abs(static_cast<double>(back.samples[i]) -
                                           clip.samples[i]));
    }
    CHECK(max_err <= 1.0 / 32768.0);
  }
  SUBCASE("empty clip is a valid wav") {
    AudioClip clip;
    clip.sample_rate = 32000;
    const auto back = audio::decode_wav(audio::encode_wav(clip));
    CHECK(back.samples.empty());
    CHECK(back.sample_rate == 32000);
  }
}

TEST_CASE("to_mono") {
  SUBCASE("single channel is identity") {
    const auto clip = audio::to_mono({{0.1f, -0.2f, 0.3f}}, 8000);
    CHECK(clip.samples == std::vector<float>{0.1f, -0.2f, 0.3f});
  }
  SUBCASE("opposite channels cancel") {
    const auto clip =
        audio::to_mono({{0.5f, -0.25f}, {-0.5f, 0.25f}}, 8000);
    for (float s : clip.samples) CHECK(s == 0.0f);
  }
  SUBCASE("constant channels average") {
    const auto clip = audio::to_mono({{0.2f, 0.2f}, {0.6f, 0.6f}}, 8000);
    for (float s : clip.samples) CHECK(s == doctest::Approx(0.4));
  }
  SUBCASE("no channels is an error") {
    CHECK_THROWS_AS(audio::to_mono({}, 8000), DataError);
  }
}

TEST_CASE("resample") {
  SUBCASE("same rate returns identical samples") {
    AudioClip clip;
    clip.sample_rate = 32000;
    clip.samples = {0.1f, 0.5f, -0.9f};
    const auto out = audio::resample(clip, 32000);
    CHECK(out.samples == clip.samples);
  }
  SUBCASE("constant stays constant at any rate change") {
    AudioClip clip;
    clip.sample_rate = 44100;
    clip.samples.assign(4410, 0.37f);
    const auto out = audio::resample(clip, 32000);
    CHECK(out.sample_rate == 32000);
    for (float s : out.samples) CHECK(s == 0.37f);
  }
  SUBCASE("1 kHz sinusoid keeps its shape from 48 kHz to 32 kHz") {
    AudioClip clip;
    clip.sample_rate = 48000;
    const int n = 48000;
    clip.samples.resize(n);
    for (int i = 0; i < n; ++i) {
      clip.samples[static_cast<std::size_t>(i)] = static_cast<float>(
          std::sin(2.0 * M_PI * 1000.0 * i / 48000.0));
    }
    const auto out = audio::resample(clip, 32000);
    // Correlate interior samples against the analytic target.
    double dot = 0, ee = 0, aa = 0;
    for (std::size_t i = 100; i + 100 < out.samples.size(); ++i) {
      const double expect =
          std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 32000.0);
      dot += expect * out.samples[i];
      ee += expect * expect;
      aa += static_cast<double>(out.samples[i]) * out.samples[i];
    }
    CHECK(dot / std::sqrt(ee * aa) > 0.999);
  }
  SUBCASE("duration preserved within one output sample") {
    AudioClip clip;
    clip.sample_rate = 44100;
    clip.samples.assign(99999, 0.0f);
    const auto out = audio::resample(clip, 32000);
    const double in_dur = clip.duration_seconds();
    const double out_dur = out.duration_seconds();
    CHECK(std::abs(in_dur - out_dur) <= 1.0 / 32000.0);
  }
}

TEST_CASE("to_mono is idempotent on mono input") {
  Rng rng(7);
  std::vector<float> ch(257);
  for (auto& s : ch) s = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto once = audio::to_mono({ch}, 32000);
  const auto twice = audio::to_mono({once.samples}, 32000);
  CHECK(once.samples == twice.samples);
}

TEST_CASE("clamp restores the amplitude invariant") {
  std::vector<float> s{1.5f, -2.0f, 0.5f};
  audio::clamp_amplitude(s);
  CHECK(s == std::vector<float>{1.0f, -1.0f, 0.5f});
}

TEST_CASE("wav_file_duration_seconds reads the header only") {
  const auto dir = std::filesystem::temp_directory_path() / "biosed_audio_t";
  std::filesystem::create_directories(dir);
  AudioClip clip;
  clip.sample_rate = 32000;
  clip.samples.assign(48000, 0.25f);
  audio::write_wav_file(dir / "d.wav", clip);
  CHECK(audio::wav_file_duration_seconds(dir / "d.wav") ==
        doctest::Approx(1.5));
  std::filesystem::remove_all(dir);
}
