/* Copyright 2026 The attkws Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "attkws/audio.hpp"
#include "attkws/rng.hpp"

namespace attkws {
namespace {

TEST(DecodeWav, ScalesInt16ByDivision) {
  const std::vector<int16_t> samples = {0, -32768, 16384, 32767, -1};
  AudioClip clip = decode_wav(encode_wav(samples, 16000));
  ASSERT_EQ(clip.samples.size(), samples.size());
  EXPECT_EQ(clip.sample_rate_hz, 16000);
  EXPECT_FLOAT_EQ(clip.samples[0], 0.0f);
  EXPECT_FLOAT_EQ(clip.samples[1], -1.0f);
  EXPECT_FLOAT_EQ(clip.samples[2], 0.5f);
  EXPECT_FLOAT_EQ(clip.samples[3], 32767.0f / 32768.0f);
  EXPECT_FLOAT_EQ(clip.samples[4], -1.0f / 32768.0f);
}

TEST(DecodeWav, RoundTripsInt16Exactly) {
  Rng rng(51);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<int16_t> samples(1000 + rep * 317);
    for (auto& s : samples) {
      s = static_cast<int16_t>(static_cast<int32_t>(rng.below(65536)) - 32768);
    }
    AudioClip clip = decode_wav(encode_wav(samples, 16000));
    ASSERT_EQ(clip.samples.size(), samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
      EXPECT_EQ(clip.samples[i], static_cast<float>(samples[i]) / 32768.0f);
      EXPECT_GE(clip.samples[i], -1.0f);
      EXPECT_LE(clip.samples[i], 1.0f);
    }
  }
}

TEST(DecodeWav, MalformedHeaderThrows) {
  std::vector<uint8_t> bytes = encode_wav({1, 2, 3}, 16000);
  bytes[0] = 'X';
  EXPECT_THROW(decode_wav(bytes), DecodeError);

  std::vector<uint8_t> tiny(bytes.begin(), bytes.begin() + 8);
  EXPECT_THROW(decode_wav(tiny), DecodeError);

  std::vector<uint8_t> truncated = encode_wav({1, 2, 3, 4, 5}, 16000);
  truncated.resize(truncated.size() - 4);
  EXPECT_THROW(decode_wav(truncated), DecodeError);
}

TEST(DecodeWav, UnsupportedEncodingsThrow) {
  // Stereo: patch the channel count field (offset 22 in the canonical header).
  std::vector<uint8_t> stereo = encode_wav({1, 2, 3, 4}, 16000);
  stereo[22] = 2;
  EXPECT_THROW(decode_wav(stereo), UnsupportedFormat);

  // IEEE float format tag.
  std::vector<uint8_t> ieee = encode_wav({1, 2}, 16000);
  ieee[20] = 3;
  EXPECT_THROW(decode_wav(ieee), UnsupportedFormat);

  // 8-bit samples.
  std::vector<uint8_t> eight = encode_wav({1, 2}, 16000);
  eight[34] = 8;
  EXPECT_THROW(decode_wav(eight), UnsupportedFormat);
}

TEST(DecodeWav, ReadsSampleRateFromFmtChunk) {
  AudioClip clip = decode_wav(encode_wav({0, 0}, 8000));
  EXPECT_EQ(clip.sample_rate_hz, 8000);
}

AudioClip ramp_clip(int n) {
  AudioClip clip;
  clip.samples.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) clip.samples[static_cast<size_t>(i)] = static_cast<float>(i + 1);
  return clip;
}

TEST(FitLength, ExactLengthIsIdentity) {
  AudioClip clip = ramp_clip(16000);
  AudioClip out = fit_length(clip, 16000);
  EXPECT_EQ(out.samples, clip.samples);
}

TEST(FitLength, ShortClipPadsSymmetrically) {
  AudioClip out = fit_length(ramp_clip(15998), 16000);
  ASSERT_EQ(out.samples.size(), 16000u);
  EXPECT_EQ(out.samples[0], 0.0f);
  EXPECT_EQ(out.samples[1], 1.0f);
  EXPECT_EQ(out.samples[15998], 15998.0f);
  EXPECT_EQ(out.samples[15999], 0.0f);
}

TEST(FitLength, OddDeficitPutsExtraZeroOnTheRight) {
  AudioClip out = fit_length(ramp_clip(5), 8);
  const std::vector<float> want = {0.0f, 1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 0.0f, 0.0f};
  EXPECT_EQ(out.samples, want);
}

TEST(FitLength, LongClipCenterCrops) {
  AudioClip out = fit_length(ramp_clip(16002), 16000);
  ASSERT_EQ(out.samples.size(), 16000u);
  EXPECT_EQ(out.samples.front(), 2.0f);   // index 1 of the source
  EXPECT_EQ(out.samples.back(), 16001.0f);  // index 16000 of the source
}

TEST(FitLength, Idempotent) {
  Rng rng(52);
  for (int n : {31, 100, 16000, 17003}) {
    AudioClip clip;
    clip.samples.resize(static_cast<size_t>(n));
    for (auto& v : clip.samples) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    AudioClip once = fit_length(clip, 16000);
    AudioClip twice = fit_length(once, 16000);
    EXPECT_EQ(once.samples, twice.samples);
  }
}

TEST(FitLength, EmptyClipThrows) {
  AudioClip clip;
  EXPECT_THROW(fit_length(clip, 16000), DecodeError);
}

}  // namespace
}  // namespace attkws
