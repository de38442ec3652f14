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

// Non-trainable audio frontend: Hann-windowed STFT power spectra projected
// through a triangular mel filterbank, log10-compressed with a floor.
//
// Frames are centered by reflect-padding n_dft/2 samples on each side, so the
// frame count is 1 + raw_len / hop regardless of n_dft. The mel scale is the
// HTK variant mel(f) = 2595 log10(1 + f / 700); triangles peak at 1 with no
// area normalization.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "attkws/audio.hpp"
#include "attkws/errors.hpp"
#include "attkws/tensor.hpp"

namespace attkws {

struct SpectrogramConfig {
  int n_dft = 1024;
  int hop = 128;
  int n_mels = 80;
  int sample_rate_hz = 16000;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
  double log_floor = 1e-10;

  int bins() const { return n_dft / 2 + 1; }

  // raw_len == 0 skips the hop-divisibility check (filterbank-only use).
  void validate(int raw_len = 0) const {
    if (n_dft < 2 || (n_dft & (n_dft - 1)) != 0) {
      throw ConfigError("spectrogram: n_dft must be a power of two, got " + std::to_string(n_dft));
    }
    if (hop <= 0 || (raw_len > 0 && raw_len % hop != 0)) {
      throw ConfigError("spectrogram: hop must divide the clip length");
    }
    if (n_mels <= 0) throw ConfigError("spectrogram: n_mels must be positive");
    if (sample_rate_hz <= 0) throw ConfigError("spectrogram: sample rate must be positive");
    if (!(f_min_hz < f_max_hz) || f_max_hz > sample_rate_hz / 2.0) {
      throw ConfigError("spectrogram: need f_min < f_max <= sample_rate / 2");
    }
    if (log_floor <= 0.0) throw ConfigError("spectrogram: log floor must be positive");
  }

  int frames(int raw_len = kDefaultRawLen) const { return 1 + raw_len / hop; }
  double frame_hop_seconds() const {
    return static_cast<double>(hop) / static_cast<double>(sample_rate_hz);
  }
};

inline double mel_from_hz(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double hz_from_mel(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Iterative radix-2 decimation-in-time FFT with tables precomputed per size.
template <class Real>
class Fft {
 public:
  explicit Fft(int n) : n_(n) {
    if (n < 2 || (n & (n - 1)) != 0) throw ConfigError("fft: size must be a power of two");
    bitrev_.resize(static_cast<size_t>(n));
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < log2n; ++b) {
        if (i & (1 << b)) r |= 1 << (log2n - 1 - b);
      }
      bitrev_[static_cast<size_t>(i)] = r;
    }
    // One twiddle per half-size position of the final stage; earlier stages
    // stride through the same table.
    twiddle_.resize(static_cast<size_t>(n / 2));
    for (int k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * 3.14159265358979323846264338327950288 * k / n;
      twiddle_[static_cast<size_t>(k)] =
          std::complex<Real>(static_cast<Real>(std::cos(angle)), static_cast<Real>(std::sin(angle)));
    }
  }

  int size() const { return n_; }

  void transform(std::vector<std::complex<Real>>& a) const {
    if (static_cast<int>(a.size()) != n_) throw ShapeError("fft: input length mismatch");
    for (int i = 0; i < n_; ++i) {
      const int j = bitrev_[static_cast<size_t>(i)];
      if (i < j) std::swap(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
    }
    for (int len = 2; len <= n_; len <<= 1) {
      const int half = len / 2;
      const int stride = n_ / len;
      for (int start = 0; start < n_; start += len) {
        for (int k = 0; k < half; ++k) {
          const std::complex<Real> w = twiddle_[static_cast<size_t>(k * stride)];
          std::complex<Real>& lo = a[static_cast<size_t>(start + k)];
          std::complex<Real>& hi = a[static_cast<size_t>(start + k + half)];
          const std::complex<Real> t = w * hi;
          hi = lo - t;
          lo = lo + t;
        }
      }
    }
  }

 private:
  int n_;
  std::vector<int> bitrev_;
  std::vector<std::complex<Real>> twiddle_;
};

namespace dsp_detail {

// Reflect padding without repeating the edge sample (pad < length).
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace dsp_detail

// Power spectrogram: [frames x (n_dft/2 + 1)].
template <class Real>
Tensor<Real> stft_power(const AudioClip& clip, const SpectrogramConfig& cfg) {
  const int raw_len = static_cast<int>(clip.samples.size());
  cfg.validate(raw_len);

  const int n = cfg.n_dft;
  const int pad = n / 2;
  const int n_frames = cfg.frames(raw_len);
  const int n_bins = cfg.bins();

  std::vector<Real> window(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    window[static_cast<size_t>(i)] = static_cast<Real>(
        0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846264338327950288 * i / n));
  }

  std::vector<Real> padded(static_cast<size_t>(raw_len + 2 * pad));
  for (int64_t i = 0; i < static_cast<int64_t>(padded.size()); ++i) {
    padded[static_cast<size_t>(i)] =
        static_cast<Real>(clip.samples[static_cast<size_t>(dsp_detail::reflect_index(i - pad, raw_len))]);
  }

  const Fft<Real> fft(n);
  Tensor<Real> out = Tensor<Real>::zeros({n_frames, n_bins});
  std::vector<std::complex<Real>> buf(static_cast<size_t>(n));
  for (int t = 0; t < n_frames; ++t) {
    const Real* src = padded.data() + static_cast<size_t>(t) * cfg.hop;
    for (int i = 0; i < n; ++i) {
      buf[static_cast<size_t>(i)] = std::complex<Real>(src[i] * window[static_cast<size_t>(i)], 0);
    }
    fft.transform(buf);
    Real* dst = out.data.data() + static_cast<size_t>(t) * n_bins;
    for (int k = 0; k < n_bins; ++k) {
      const std::complex<Real>& c = buf[static_cast<size_t>(k)];
      dst[k] = c.real() * c.real() + c.imag() * c.imag();
    }
  }
  return out;
}

// Triangular mel filterbank: [n_mels x (n_dft/2 + 1)]. Filter k rises from
// break k to k+1 and falls to k+2, where the n_mels + 2 break frequencies are
// equidistant in mel between f_min and f_max.
template <class Real>
Tensor<Real> mel_filterbank(const SpectrogramConfig& cfg) {
  cfg.validate();
  const int n_bins = cfg.bins();

  std::vector<double> break_hz(static_cast<size_t>(cfg.n_mels) + 2);
  const double mel_lo = mel_from_hz(cfg.f_min_hz);
  const double mel_hi = mel_from_hz(cfg.f_max_hz);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    const double m = mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1);
    break_hz[static_cast<size_t>(i)] = hz_from_mel(m);
  }

  Tensor<Real> fb = Tensor<Real>::zeros({cfg.n_mels, n_bins});
  const double hz_per_bin = static_cast<double>(cfg.sample_rate_hz) / cfg.n_dft;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = break_hz[static_cast<size_t>(m)];
    const double mid = break_hz[static_cast<size_t>(m) + 1];
    const double hi = break_hz[static_cast<size_t>(m) + 2];
    bool any = false;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * hz_per_bin;
      double w = 0.0;
      if (f > lo && f < hi) {
        w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
      if (w > 0.0) {
        fb.at2(m, k) = static_cast<Real>(w);
        any = true;
      }
    }
    if (!any) {
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " covers no DFT bin; reduce n_mels or raise n_dft");
    }
  }
  return fb;
}

template <class Real>
struct MelSpectrogram {
  Tensor<Real> values;  // [spec_len x n_mels], log10 power
  double frame_hop_seconds = 0.0;
};

// Split entry point so callers can reuse a shared filterbank across clips.
template <class Real>
MelSpectrogram<Real> log_mel_from_power(const Tensor<Real>& power, const Tensor<Real>& fb,
                                        const SpectrogramConfig& cfg) {
  const int n_frames = power.dim(0);
  const int n_bins = power.dim(1);
  if (fb.dim(1) != n_bins) throw ShapeError("log_mel: filterbank/power bin mismatch");
  const Real floor = static_cast<Real>(cfg.log_floor);

  MelSpectrogram<Real> out;
  out.frame_hop_seconds = cfg.frame_hop_seconds();
  out.values = Tensor<Real>::zeros({n_frames, cfg.n_mels});
  for (int t = 0; t < n_frames; ++t) {
    const Real* prow = power.data.data() + static_cast<size_t>(t) * n_bins;
    Real* orow = out.values.data.data() + static_cast<size_t>(t) * cfg.n_mels;
    for (int m = 0; m < cfg.n_mels; ++m) {
      const Real* frow = fb.data.data() + static_cast<size_t>(m) * n_bins;
      Real acc = 0;
      for (int k = 0; k < n_bins; ++k) acc += frow[k] * prow[k];
      orow[m] = std::log10(std::max(acc, floor));
    }
  }
  return out;
}

template <class Real>
MelSpectrogram<Real> log_mel(const AudioClip& clip, const SpectrogramConfig& cfg) {
  const Tensor<Real> power = stft_power<Real>(clip, cfg);
  const Tensor<Real> fb = mel_filterbank<Real>(cfg);
  return log_mel_from_power(power, fb, cfg);
}

}  // namespace attkws
