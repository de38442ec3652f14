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

#include <cmath>
#include <complex>
#include <vector>

#include <gtest/gtest.h>

#include "attkws/dsp.hpp"
#include "attkws/rng.hpp"

namespace attkws {
namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

// Independent quadratic DFT used as the FFT oracle.
std::vector<std::complex<double>> direct_dft(const std::vector<std::complex<double>>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t i = 0; i < n; ++i) {
      const double angle = -2.0 * kPi * static_cast<double>(k * i % n) / static_cast<double>(n);
      acc += x[i] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  return out;
}

AudioClip tone_clip(double freq_hz, double phase = 0.0, double amp = 1.0, int len = 16000) {
  AudioClip clip;
  clip.samples.resize(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i) {
    clip.samples[static_cast<size_t>(i)] =
        static_cast<float>(amp * std::sin(2.0 * kPi * freq_hz * i / 16000.0 + phase));
  }
  return clip;
}

TEST(Fft, MatchesDirectDftOnRandomSignals) {
  Rng rng(41);
  const Fft<double> fft(1024);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<std::complex<double>> x(1024);
    for (auto& v : x) v = std::complex<double>(rng.normal(), 0.0);
    std::vector<std::complex<double>> got = x;
    fft.transform(got);
    const auto want = direct_dft(x);
    double num = 0.0, den = 0.0;
    for (size_t k = 0; k < x.size(); ++k) {
      num += std::norm(got[k] - want[k]);
      den += std::norm(want[k]);
    }
    EXPECT_LT(std::sqrt(num / den), 1e-6);
  }
}

TEST(Fft, ParsevalOnFullFrame) {
  Rng rng(42);
  const int n = 1024;
  std::vector<std::complex<double>> x(static_cast<size_t>(n));
  double energy = 0.0;
  for (auto& v : x) {
    v = std::complex<double>(rng.normal(), 0.0);
    energy += v.real() * v.real();
  }
  std::vector<std::complex<double>> spec = x;
  Fft<double>(n).transform(spec);
  // Half-spectrum power with symmetric-bin doubling equals n * energy.
  double power = std::norm(spec[0]) + std::norm(spec[static_cast<size_t>(n / 2)]);
  for (int k = 1; k < n / 2; ++k) power += 2.0 * std::norm(spec[static_cast<size_t>(k)]);
  EXPECT_NEAR(power / (n * energy), 1.0, 1e-6);
}

TEST(Fft, RejectsNonPowerOfTwo) {
  EXPECT_THROW(Fft<double>(96), ConfigError);
}

TEST(StftPower, ZeroClipGivesZeroMatrix) {
  AudioClip clip;
  clip.samples.assign(16000, 0.0f);
  SpectrogramConfig cfg;
  Tensor<float> p = stft_power<float>(clip, cfg);
  EXPECT_EQ(p.shape, (Shape{126, 513}));
  for (float v : p.data) EXPECT_EQ(v, 0.0f);
}

TEST(StftPower, KilohertzTonePeaksAtBin64) {
  SpectrogramConfig cfg;
  Tensor<double> p = stft_power<double>(tone_clip(1000.0), cfg);
  // Frames 4..121 see only real signal; the first/last four overlap the
  // reflect padding, which phase-flips a sine and smears its peak slightly.
  for (int t = 4; t <= 121; ++t) {
    int argmax = 0;
    for (int k = 1; k < p.dim(1); ++k) {
      if (p.at2(t, k) > p.at2(t, argmax)) argmax = k;
    }
    EXPECT_EQ(argmax, 64) << "frame " << t;
  }
  // Aggregate energy across all frames still peaks at the formula bin.
  std::vector<double> total(static_cast<size_t>(p.dim(1)), 0.0);
  for (int t = 0; t < p.dim(0); ++t) {
    for (int k = 0; k < p.dim(1); ++k) total[static_cast<size_t>(k)] += p.at2(t, k);
  }
  EXPECT_EQ(std::max_element(total.begin(), total.end()) - total.begin(), 64);
}

TEST(StftPower, ToneArgmaxIsPhaseInvariant) {
  SpectrogramConfig cfg;
  for (double phase : {0.0, 0.4, 1.3, 2.9}) {
    Tensor<double> p = stft_power<double>(tone_clip(1500.0, phase), cfg);
    const int t = 60;
    int argmax = 0;
    for (int k = 1; k < p.dim(1); ++k) {
      if (p.at2(t, k) > p.at2(t, argmax)) argmax = k;
    }
    EXPECT_EQ(argmax, 96);  // 1500 * 1024 / 16000
  }
}

TEST(StftPower, FrameCountIndependentOfContent) {
  Rng rng(43);
  AudioClip clip;
  clip.samples.resize(16000);
  for (auto& v : clip.samples) v = static_cast<float>(0.1 * rng.normal());
  SpectrogramConfig cfg;
  EXPECT_EQ(stft_power<float>(clip, cfg).dim(0), 126);
  EXPECT_EQ(cfg.frames(), 126);
}

TEST(MelScale, FormulaAnchors) {
  EXPECT_DOUBLE_EQ(mel_from_hz(0.0), 0.0);
  EXPECT_NEAR(mel_from_hz(700.0), 781.17, 5e-3);
  EXPECT_NEAR(mel_from_hz(700.0), 2595.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(hz_from_mel(mel_from_hz(3456.0)), 3456.0, 1e-9);
}

TEST(MelFilterbank, EveryFilterTouchesABin) {
  SpectrogramConfig cfg;
  Tensor<float> fb = mel_filterbank<float>(cfg);
  EXPECT_EQ(fb.shape, (Shape{80, 513}));
  for (int m = 0; m < 80; ++m) {
    bool any = false;
    for (int k = 0; k < 513; ++k) {
      EXPECT_GE(fb.at2(m, k), 0.0f);
      if (fb.at2(m, k) > 0.0f) any = true;
    }
    EXPECT_TRUE(any) << "filter " << m;
  }
}

TEST(MelFilterbank, ColumnSumsBounded) {
  SpectrogramConfig cfg;
  Tensor<double> fb = mel_filterbank<double>(cfg);
  for (int k = 0; k < fb.dim(1); ++k) {
    double s = 0.0;
    for (int m = 0; m < fb.dim(0); ++m) s += fb.at2(m, k);
    EXPECT_LE(s, 2.0 + 1e-12);
  }
}

TEST(MelFilterbank, TooManyFiltersThrows) {
  SpectrogramConfig cfg;
  cfg.n_dft = 64;  // 33 bins cannot host 200 disjoint triangles
  cfg.n_mels = 200;
  EXPECT_THROW(mel_filterbank<double>(cfg), ConfigError);
}

TEST(LogMel, SilenceClampsToFloor) {
  AudioClip clip;
  clip.samples.assign(16000, 0.0f);
  SpectrogramConfig cfg;
  MelSpectrogram<float> mel = log_mel<float>(clip, cfg);
  EXPECT_EQ(mel.values.shape, (Shape{126, 80}));
  const float want = std::log10(1e-10f);
  for (float v : mel.values.data) EXPECT_EQ(v, want);
}

TEST(LogMel, ShapeAndHopSeconds) {
  SpectrogramConfig cfg;
  MelSpectrogram<float> mel = log_mel<float>(tone_clip(440.0), cfg);
  EXPECT_EQ(mel.values.shape, (Shape{126, 80}));
  EXPECT_DOUBLE_EQ(mel.frame_hop_seconds, 0.008);
  for (float v : mel.values.data) EXPECT_GE(v, std::log10(1e-10f));
}

TEST(LogMel, AmplitudeDoublingShiftsByLog10Of4) {
  SpectrogramConfig cfg;
  AudioClip soft = tone_clip(520.0, 0.3, 0.2);
  AudioClip loud = tone_clip(520.0, 0.3, 0.4);
  MelSpectrogram<float> a = log_mel<float>(soft, cfg);
  MelSpectrogram<float> b = log_mel<float>(loud, cfg);
  const float floor = std::log10(1e-10f);
  const double shift = std::log10(4.0);
  int checked = 0;
  for (size_t i = 0; i < a.values.data.size(); ++i) {
    if (a.values.data[i] > floor + 1.0f && b.values.data[i] > floor + 1.0f) {
      EXPECT_NEAR(b.values.data[i] - a.values.data[i], shift, 1e-5);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(LogMel, DeterministicBytes) {
  SpectrogramConfig cfg;
  AudioClip clip = tone_clip(777.0, 0.1, 0.5);
  MelSpectrogram<float> a = log_mel<float>(clip, cfg);
  MelSpectrogram<float> b = log_mel<float>(clip, cfg);
  ASSERT_EQ(a.values.data.size(), b.values.data.size());
  EXPECT_EQ(std::memcmp(a.values.data.data(), b.values.data.data(),
                        a.values.data.size() * sizeof(float)),
            0);
}

TEST(SpectrogramConfig, Validation) {
  SpectrogramConfig cfg;
  EXPECT_NO_THROW(cfg.validate(16000));
  cfg.hop = 100;
  EXPECT_NO_THROW(cfg.validate(16000));  // 16000 % 100 == 0
  cfg.hop = 127;
  EXPECT_THROW(cfg.validate(16000), ConfigError);
  cfg = SpectrogramConfig{};
  cfg.n_dft = 1000;
  EXPECT_THROW(cfg.validate(16000), ConfigError);
  cfg = SpectrogramConfig{};
  cfg.f_max_hz = 9000.0;
  EXPECT_THROW(cfg.validate(16000), ConfigError);
}

}  // namespace
}  // namespace attkws
