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

// Generates the committed toy dataset under tests/fixtures/speech_toy: two
// clearly distinguishable synthetic word classes in the Speech Commands
// directory layout (8 "speakers" per word, split lists, background noise).
//
//   gen_fixtures <output-dir>
//
// Synthesis is fully seeded; rerunning reproduces the same bytes.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "attkws/audio.hpp"
#include "attkws/rng.hpp"

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr int kRate = 16000;

double hann_envelope(int n, double start, double span) {
  const double pos = (n - start) / span;
  if (pos <= 0.0 || pos >= 1.0) return 0.0;
  return 0.5 - 0.5 * std::cos(2.0 * kPi * pos);
}

// "left": a steady harmonic stack around a low fundamental.
std::vector<int16_t> synth_left(int speaker) {
  attkws::Rng rng(1000u + static_cast<uint32_t>(speaker));
  const double f0 = 165.0 + 11.0 * speaker + rng.uniform(-4.0, 4.0);
  const double span = 7200.0 + rng.uniform(-600.0, 600.0);
  const double start = 8000.0 - span / 2.0 + rng.uniform(-700.0, 700.0);
  const double amp[4] = {1.0, 0.55, 0.3, 0.18};
  double phase[4];
  for (double& p : phase) p = rng.uniform(0.0, 2.0 * kPi);

  std::vector<int16_t> out(kRate);
  for (int n = 0; n < kRate; ++n) {
    const double t = static_cast<double>(n) / kRate;
    double x = 0.0;
    for (int h = 0; h < 4; ++h) {
      x += amp[h] * std::sin(2.0 * kPi * f0 * (h + 1) * t + phase[h]);
    }
    x = 0.22 * hann_envelope(n, start, span) * x + 0.002 * rng.uniform(-1.0, 1.0);
    out[static_cast<size_t>(n)] = static_cast<int16_t>(std::lround(32000.0 * std::clamp(x, -1.0, 1.0)));
  }
  return out;
}

// "right": an upward chirp through the upper mel bands.
std::vector<int16_t> synth_right(int speaker) {
  attkws::Rng rng(2000u + static_cast<uint32_t>(speaker));
  const double f_lo = 850.0 + 40.0 * speaker + rng.uniform(-30.0, 30.0);
  const double f_hi = 2400.0 + 60.0 * speaker + rng.uniform(-80.0, 80.0);
  const double span = 7200.0 + rng.uniform(-600.0, 600.0);
  const double start = 8000.0 - span / 2.0 + rng.uniform(-700.0, 700.0);
  const double phase0 = rng.uniform(0.0, 2.0 * kPi);

  std::vector<int16_t> out(kRate);
  for (int n = 0; n < kRate; ++n) {
    const double env = hann_envelope(n, start, span);
    double x = 0.0;
    if (env > 0.0) {
      const double pos = (n - start) / span;  // 0..1 through the word
      const double tau = (n - start) / kRate;
      // Linear sweep f_lo -> f_hi: integrated instantaneous frequency.
      const double sweep_phase = 2.0 * kPi * tau * (f_lo + 0.5 * (f_hi - f_lo) * pos);
      x = std::sin(sweep_phase + phase0) + 0.4 * std::sin(2.0 * sweep_phase + phase0);
    }
    x = 0.30 * env * x + 0.002 * rng.uniform(-1.0, 1.0);
    out[static_cast<size_t>(n)] = static_cast<int16_t>(std::lround(32000.0 * std::clamp(x, -1.0, 1.0)));
  }
  return out;
}

std::vector<int16_t> synth_noise() {
  attkws::Rng rng(3000u);
  std::vector<int16_t> out(60000);
  double state = 0.0;
  for (auto& s : out) {
    state = 0.95 * state + 0.05 * rng.uniform(-1.0, 1.0);  // low-passed rumble
    const double x = 0.06 * state + 0.01 * rng.uniform(-1.0, 1.0);
    s = static_cast<int16_t>(std::lround(32000.0 * std::clamp(x, -1.0, 1.0)));
  }
  return out;
}

void write_wav(const fs::path& path, const std::vector<int16_t>& samples) {
  const std::vector<uint8_t> bytes = attkws::encode_wav(samples, kRate);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: gen_fixtures <output-dir>\n");
    return 1;
  }
  const fs::path root = argv[1];
  fs::create_directories(root / "left");
  fs::create_directories(root / "right");
  fs::create_directories(root / "_background_noise_");

  std::ofstream val(root / "validation_list.txt");
  std::ofstream test(root / "testing_list.txt");
  for (int spk = 0; spk < 8; ++spk) {
    const std::string name = "spk" + std::to_string(spk) + "_nohash_0.wav";
    write_wav(root / "left" / name, synth_left(spk));
    write_wav(root / "right" / name, synth_right(spk));
    if (spk == 6) val << "left/" << name << "\n" << "right/" << name << "\n";
    if (spk == 7) test << "left/" << name << "\n" << "right/" << name << "\n";
  }
  write_wav(root / "_background_noise_" / "rumble.wav", synth_noise());
  std::printf("wrote toy dataset to %s\n", root.string().c_str());
  return 0;
}
