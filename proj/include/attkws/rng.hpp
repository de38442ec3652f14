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

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace attkws {

// Seeded RNG wrapper. std::mt19937 is fully specified by the standard; the
// value transforms below are hand-rolled because the std:: distributions are
// implementation-defined, which would break reproducible training runs.
class Rng {
 public:
  explicit Rng(uint32_t seed) : gen_(seed) {}

  // Independent stream for (seed, epoch, salt). Salts keep the shuffle,
  // unknown-resample and silence-crop streams decoupled.
  static Rng for_epoch(uint32_t seed, uint32_t epoch, uint32_t salt) {
    std::seed_seq seq{seed, epoch, salt};
    Rng r(0);
    r.gen_.seed(seq);
    r.have_spare_ = false;
    return r;
  }

  uint32_t next_u32() { return gen_(); }

  // Uniform in [0, 1) with 32 bits of resolution.
  double uniform() {
    return static_cast<double>(next_u32()) * (1.0 / 4294967296.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare is cached so draw order is a
  // pure function of call order.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Unbiased integer in [0, n) by rejection.
  uint32_t below(uint32_t n) {
    if (n <= 1) return 0;
    const uint32_t limit = UINT32_MAX - UINT32_MAX % n;
    uint32_t v = next_u32();
    while (v >= limit) v = next_u32();
    return v % n;
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = below(static_cast<uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace attkws
