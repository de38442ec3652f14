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

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "attkws/errors.hpp"

namespace attkws {

constexpr int kDefaultRawLen = 16000;
constexpr int kDatasetSampleRate = 16000;

// Fixed-length mono waveform. Samples are int16 PCM scaled to [-1, 1).
struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = kDatasetSampleRate;
  std::string label;
  std::string speaker_hash_key;  // filename stem
};

// --------------------------------------------------------------------------
// RIFF/WAVE decoding. Only the canonical dataset encoding is accepted:
// PCM (format tag 1), mono, 16-bit, little-endian.

namespace wav_detail {

inline uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace wav_detail

inline AudioClip decode_wav(const std::vector<uint8_t>& bytes) {
  using wav_detail::read_u16;
  using wav_detail::read_u32;

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DecodeError("wav: not a RIFF/WAVE container");
  }

  bool have_fmt = false;
  uint16_t format_tag = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data_chunk = nullptr;
  uint32_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    const uint32_t chunk_len = read_u32(hdr + 4);
    pos += 8;
    if (pos + chunk_len > bytes.size()) throw DecodeError("wav: truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw DecodeError("wav: fmt chunk too short");
      format_tag = read_u16(bytes.data() + pos);
      channels = read_u16(bytes.data() + pos + 2);
      sample_rate = read_u32(bytes.data() + pos + 4);
      bits = read_u16(bytes.data() + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_chunk = bytes.data() + pos;
      data_len = chunk_len;
    }
    pos += chunk_len + (chunk_len & 1);  // chunks are 2-byte aligned
  }

  if (!have_fmt || data_chunk == nullptr) throw DecodeError("wav: missing fmt or data chunk");
  if (format_tag != 1) {
    throw UnsupportedFormat("wav: format tag " + std::to_string(format_tag) +
                            " (only PCM is supported)");
  }
  if (channels != 1) {
    throw UnsupportedFormat("wav: " + std::to_string(channels) + " channels (mono only)");
  }
  if (bits != 16) {
    throw UnsupportedFormat("wav: " + std::to_string(bits) + "-bit samples (16-bit only)");
  }
  if (data_len % 2 != 0) throw DecodeError("wav: odd data chunk length for 16-bit samples");

  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(sample_rate);
  clip.samples.resize(data_len / 2);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    const int16_t s = static_cast<int16_t>(
        static_cast<uint16_t>(data_chunk[2 * i] | (data_chunk[2 * i + 1] << 8)));
    clip.samples[i] = static_cast<float>(s) / 32768.0f;
  }
  return clip;
}

// Minimal canonical writer (PCM16 mono). Used by tooling and tests; decoding
// its output reproduces the int16 samples exactly.
inline std::vector<uint8_t> encode_wav(const std::vector<int16_t>& samples, int sample_rate_hz) {
  const uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
  std::vector<uint8_t> out;
  out.reserve(44 + data_len);
  auto push_u32 = [&out](uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
  };
  auto push_u16 = [&out](uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  };
  auto push_tag = [&out](const char* tag) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(tag[i]));
  };

  push_tag("RIFF");
  push_u32(36 + data_len);
  push_tag("WAVE");
  push_tag("fmt ");
  push_u32(16);
  push_u16(1);  // PCM
  push_u16(1);  // mono
  push_u32(static_cast<uint32_t>(sample_rate_hz));
  push_u32(static_cast<uint32_t>(sample_rate_hz) * 2);  // byte rate
  push_u16(2);                                          // block align
  push_u16(16);                                         // bits per sample
  push_tag("data");
  push_u32(data_len);
  for (int16_t s : samples) push_u16(static_cast<uint16_t>(s));
  return out;
}

inline std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open file: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

inline AudioClip load_wav(const std::filesystem::path& path) {
  AudioClip clip = decode_wav(read_file_bytes(path));
  clip.speaker_hash_key = path.stem().string();
  return clip;
}

// Normalize to exactly raw_len samples: shorter clips are zero-padded
// symmetrically (extra sample on the right when the deficit is odd), longer
// clips are center-cropped.
inline AudioClip fit_length(const AudioClip& clip, int raw_len = kDefaultRawLen) {
  if (clip.samples.empty()) throw DecodeError("fit_length: empty clip");
  const int n = static_cast<int>(clip.samples.size());
  AudioClip out = clip;
  if (n == raw_len) return out;
  if (n < raw_len) {
    const int pad = raw_len - n;
    const int left = pad / 2;
    out.samples.assign(static_cast<size_t>(raw_len), 0.0f);
    std::copy(clip.samples.begin(), clip.samples.end(), out.samples.begin() + left);
  } else {
    const int start = (n - raw_len) / 2;
    out.samples.assign(clip.samples.begin() + start, clip.samples.begin() + start + raw_len);
  }
  return out;
}

}  // namespace attkws
