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

// Deterministic SVG rendering of waveform, mel-spectrogram strip and
// log-scaled attention curve stacked over a shared time axis.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <string>

#include "attkws/audio.hpp"
#include "attkws/dsp.hpp"
#include "attkws/io_util.hpp"
#include "attkws/model.hpp"

namespace attkws {

namespace svg_detail {

inline constexpr double kLeft = 60.0;
inline constexpr double kWidth = 760.0;
inline constexpr double kLogFloor = -20.0;

inline void appendf(std::string& out, const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  out += buf;
}

inline void panel_frame(std::string& out, double y0, double h, const char* title) {
  appendf(out,
          "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"none\" "
          "stroke=\"#444\" stroke-width=\"1\"/>\n",
          kLeft, y0, kWidth, h);
  appendf(out, "<text x=\"%.2f\" y=\"%.2f\" font-family=\"monospace\" font-size=\"12\">%s</text>\n",
          kLeft, y0 - 6.0, title);
}

inline void time_ticks(std::string& out, double y) {
  for (int i = 0; i <= 5; ++i) {
    const double t = 0.2 * i;
    const double x = kLeft + t * kWidth;
    appendf(out,
            "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#444\"/>\n",
            x, y, x, y + 5.0);
    appendf(out,
            "<text x=\"%.2f\" y=\"%.2f\" font-family=\"monospace\" font-size=\"11\" "
            "text-anchor=\"middle\">%.1f</text>\n",
            x, y + 18.0, t);
  }
  appendf(out,
          "<text x=\"%.2f\" y=\"%.2f\" font-family=\"monospace\" font-size=\"11\" "
          "text-anchor=\"middle\">time (s)</text>\n",
          kLeft + kWidth / 2.0, y + 34.0);
}

}  // namespace svg_detail

// The three panels share the x axis [0, 1] seconds; frame f sits at
// f * hop_seconds. Identical inputs produce byte-identical output.
template <class Real>
std::string render_attention_svg(const AudioClip& clip, const MelSpectrogram<Real>& mel,
                                 const AttentionTrace& trace) {
  using namespace svg_detail;
  if (static_cast<size_t>(mel.values.dim(0)) != trace.weights.size()) {
    throw ShapeError("render: mel frames " + std::to_string(mel.values.dim(0)) +
                     " vs trace frames " + std::to_string(trace.weights.size()));
  }
  if (clip.samples.empty() || clip.sample_rate_hz <= 0) {
    throw ShapeError("render: empty clip");
  }
  const double duration =
      static_cast<double>(clip.samples.size()) / static_cast<double>(clip.sample_rate_hz);

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" height=\"640\" "
         "viewBox=\"0 0 860 640\">\n";
  out += "<rect width=\"860\" height=\"640\" fill=\"#ffffff\"/>\n";

  // Waveform: per-column min/max envelope.
  {
    const double y0 = 24.0, h = 140.0, mid = y0 + h / 2.0;
    panel_frame(out, y0, h, "waveform");
    const int cols = 380;
    const size_t n = clip.samples.size();
    out += "<path fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1\" d=\"";
    for (int c = 0; c < cols; ++c) {
      const size_t lo = n * static_cast<size_t>(c) / cols;
      const size_t hi = std::max(lo + 1, n * (static_cast<size_t>(c) + 1) / cols);
      float mn = clip.samples[lo], mx = clip.samples[lo];
      for (size_t i = lo; i < hi && i < n; ++i) {
        mn = std::min(mn, clip.samples[i]);
        mx = std::max(mx, clip.samples[i]);
      }
      const double x = kLeft + kWidth * (c + 0.5) / cols;
      appendf(out, "M%.2f %.2f L%.2f %.2f ", x, mid - 0.5 * h * mx, x, mid - 0.5 * h * mn);
    }
    out += "\"/>\n";
  }

  // Mel spectrogram heat strip.
  {
    const double y0 = 204.0, h = 200.0;
    panel_frame(out, y0, h, "mel spectrogram (log10 power)");
    const int T = mel.values.dim(0), M = mel.values.dim(1);
    Real vmin = mel.values.data[0], vmax = mel.values.data[0];
    for (Real v : mel.values.data) {
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
    const double span = vmax > vmin ? static_cast<double>(vmax - vmin) : 1.0;
    const double bh = h / M;
    for (int t = 0; t < T; ++t) {
      const double t0 = std::max(0.0, (t - 0.5) * mel.frame_hop_seconds);
      const double t1 = std::min(duration, (t + 0.5) * mel.frame_hop_seconds);
      if (t1 <= t0) continue;
      const double x = kLeft + kWidth * std::min(t0 / duration, 1.0);
      const double w = kWidth * (t1 - t0) / duration;
      for (int m = 0; m < M; ++m) {
        const double i = (static_cast<double>(mel.values.at2(t, m)) - vmin) / span;
        const int r = static_cast<int>(std::lround(255.0 * i));
        const int g = static_cast<int>(std::lround(180.0 * i));
        const int b = static_cast<int>(std::lround(40.0 + 60.0 * (1.0 - i)));
        appendf(out,
                "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                "fill=\"rgb(%d,%d,%d)\"/>\n",
                x, y0 + h - (m + 1) * bh, w, bh, r, g, b);
      }
    }
  }

  // Attention weights on a log10 axis, floored at -20.
  {
    const double y0 = 444.0, h = 140.0;
    panel_frame(out, y0, h, "attention weight (log10, floor -20)");
    out += "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"";
    for (size_t f = 0; f < trace.weights.size(); ++f) {
      const double w = std::max(trace.weights[f], 0.0);
      const double lw = std::max(std::log10(w > 0.0 ? w : 1e-300), kLogFloor);
      const double x = kLeft + kWidth * std::min(static_cast<double>(f) * mel.frame_hop_seconds /
                                                     duration,
                                                 1.0);
      const double y = y0 + h * (lw / kLogFloor);  // 0 at top, -20 at bottom
      appendf(out, "%.2f,%.2f ", x, y);
    }
    out += "\"/>\n";
    // Query frame marker.
    const double qx =
        kLeft + kWidth * std::min(trace.query_frame_index * mel.frame_hop_seconds / duration, 1.0);
    appendf(out,
            "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#999\" "
            "stroke-dasharray=\"3,3\"/>\n",
            qx, y0, qx, y0 + h);
    for (int dec : {0, -10, -20}) {
      const double y = y0 + h * (dec / kLogFloor);
      appendf(out,
              "<text x=\"%.2f\" y=\"%.2f\" font-family=\"monospace\" font-size=\"10\" "
              "text-anchor=\"end\">1e%d</text>\n",
              kLeft - 4.0, y + 3.0, dec);
    }
    time_ticks(out, y0 + h);
  }

  out += "</svg>\n";
  return out;
}

template <class Real>
void render_attention_svg(const AudioClip& clip, const MelSpectrogram<Real>& mel,
                          const AttentionTrace& trace, const std::filesystem::path& path) {
  write_file_atomic(path, render_attention_svg(clip, mel, trace));
}

}  // namespace attkws
