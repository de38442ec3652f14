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

// Adam training under a stepped learning-rate decay with early stopping.
//
// Each optimizer step first pools exact batch-norm statistics over the whole
// batch, then runs independent per-example tapes against those constants
// (optionally across worker threads). Gradients and statistics reduce
// sequentially in example-index order, so results do not depend on the
// thread count, and training normalizes the same way inference will.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "attkws/audio.hpp"
#include "attkws/autodiff.hpp"
#include "attkws/dataset.hpp"
#include "attkws/dsp.hpp"
#include "attkws/errors.hpp"
#include "attkws/io_util.hpp"
#include "attkws/model.hpp"
#include "attkws/rng.hpp"

namespace attkws {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct TrainConfig {
  double lr0 = 0.001;
  double decay_factor = 0.4;
  int decay_every = 10;  // epochs
  int batch_size = 64;
  int max_epochs = 40;
  int patience = 10;
  uint32_t seed = 0;
  AdamConfig adam;
  double bn_momentum = 0.99;
  int threads = 0;  // 0 -> hardware concurrency

  void validate() const {
    if (!std::isfinite(lr0) || !std::isfinite(decay_factor) || lr0 <= 0 || decay_factor <= 0 ||
        decay_every <= 0 || batch_size <= 0 || max_epochs <= 0 || patience <= 0) {
      throw ConfigError("train: all schedule values must be positive");
    }
    if (patience > max_epochs) throw ConfigError("train: patience must not exceed max_epochs");
    if (adam.beta1 <= 0 || adam.beta1 >= 1 || adam.beta2 <= 0 || adam.beta2 >= 1 ||
        adam.epsilon <= 0) {
      throw ConfigError("train: invalid adam constants");
    }
  }
};

// Stepped decay: lr0 * decay_factor^floor(epoch / decay_every), epoch 0-based.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("lr_at: negative epoch");
  return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

// --------------------------------------------------------------------------
// Adam

template <class Real>
struct AdamState {
  uint64_t t = 0;
  ParamTensors<Real> m;
  ParamTensors<Real> v;

  static AdamState fresh(const AttRnnParams<Real>& params) {
    AdamState s;
    s.m = zeros_like_params(params);
    s.v = zeros_like_params(params);
    return s;
  }
};

// One update: m, v moving averages with bias correction, then
// theta -= lr * m_hat / (sqrt(v_hat) + eps). Non-trainable slots (batch-norm
// running stats) are left untouched.
template <class Real>
void adam_step(AttRnnParams<Real>& params, const ParamTensors<Real>& grads,
               AdamState<Real>& state, Real lr, const AdamConfig& cfg = {}) {
  if (grads.size() != params.slots.size()) throw ShapeError("adam_step: grad slot count");
  for (int i = 0; i < kParamCount; ++i) {
    if (!kParamDefs[static_cast<size_t>(i)].trainable) continue;
    if (has_nan(grads[static_cast<size_t>(i)])) {
      throw NumericError(std::string("adam_step: NaN gradient in ") +
                         kParamDefs[static_cast<size_t>(i)].name + " at step " +
                         std::to_string(state.t + 1));
    }
  }
  state.t += 1;
  const Real b1 = static_cast<Real>(cfg.beta1);
  const Real b2 = static_cast<Real>(cfg.beta2);
  const Real eps = static_cast<Real>(cfg.epsilon);
  // Bias corrections use the same rounded constants as the moment updates so
  // that m_hat == g exactly on the first step.
  const Real c1 =
      static_cast<Real>(1.0 - std::pow(static_cast<double>(b1), static_cast<double>(state.t)));
  const Real c2 =
      static_cast<Real>(1.0 - std::pow(static_cast<double>(b2), static_cast<double>(state.t)));
  for (int i = 0; i < kParamCount; ++i) {
    if (!kParamDefs[static_cast<size_t>(i)].trainable) continue;
    const auto& g = grads[static_cast<size_t>(i)].data;
    auto& m = state.m[static_cast<size_t>(i)].data;
    auto& v = state.v[static_cast<size_t>(i)].data;
    auto& theta = params.slots[static_cast<size_t>(i)].data;
    for (size_t j = 0; j < g.size(); ++j) {
      m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
      const Real m_hat = m[j] / c1;
      const Real v_hat = v[j] / c2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// --------------------------------------------------------------------------
// Checkpoints: little-endian, length-prefixed named float32 records behind a
// magic/version header. Loading reproduces every array bit-exactly.

struct Checkpoint {
  AttRnnConfig model;
  SpectrogramConfig dsp;
  std::string task;
  AttRnnParams<float> params;
  AdamState<float> adam;
  int epoch = 0;
  double best_val_accuracy = 0.0;
};

namespace ckpt_detail {

inline constexpr char kMagic[4] = {'A', 'K', 'W', 'S'};
inline constexpr uint16_t kVersion = 1;

struct Writer {
  std::vector<uint8_t> bytes;

  void u8(uint8_t v) { bytes.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void f32_array(const std::vector<float>& data) {
    for (float f : data) {
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      u32(bits);
    }
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    str(name);
    u32(static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) u32(static_cast<uint32_t>(d));
    f32_array(t.data);
  }
};

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw CheckpointError("checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  Tensor<float> tensor(const std::string& want_name) {
    const std::string name = str();
    if (name != want_name) {
      throw CheckpointError("checkpoint: expected array '" + want_name + "', found '" + name +
                            "'");
    }
    const uint32_t ndim = u32();
    if (ndim > 8) throw CheckpointError("checkpoint: implausible rank");
    Shape shape(ndim);
    int64_t n = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
      shape[i] = static_cast<int>(u32());
      n *= shape[i];
    }
    if (n < 0 || n > (1ll << 32)) throw CheckpointError("checkpoint: implausible array size");
    std::vector<float> data(static_cast<size_t>(n));
    need(static_cast<size_t>(n) * 4);
    for (auto& f : data) {
      const uint32_t bits = u32();
      std::memcpy(&f, &bits, 4);
    }
    return Tensor<float>(std::move(shape), std::move(data));
  }
};

}  // namespace ckpt_detail

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  using namespace ckpt_detail;
  ckpt.params.check_shapes(ckpt.model);
  Writer w;
  w.bytes.insert(w.bytes.end(), kMagic, kMagic + 4);
  w.u16(kVersion);
  w.str(ckpt.task);
  for (int v : {ckpt.model.n_mels, ckpt.model.conv1.filters, ckpt.model.conv1.kernel_time,
                ckpt.model.conv2.filters, ckpt.model.conv2.kernel_time, ckpt.model.lstm_hidden,
                ckpt.model.query_dim, ckpt.model.dense1, ckpt.model.dense2,
                ckpt.model.n_classes}) {
    w.u32(static_cast<uint32_t>(v));
  }
  for (int v : {ckpt.dsp.n_dft, ckpt.dsp.hop, ckpt.dsp.n_mels, ckpt.dsp.sample_rate_hz}) {
    w.u32(static_cast<uint32_t>(v));
  }
  w.f64(ckpt.dsp.f_min_hz);
  w.f64(ckpt.dsp.f_max_hz);
  w.f64(ckpt.dsp.log_floor);
  w.u32(static_cast<uint32_t>(ckpt.epoch));
  w.f64(ckpt.best_val_accuracy);

  w.u32(kParamCount);
  for (int i = 0; i < kParamCount; ++i) {
    w.tensor(kParamDefs[static_cast<size_t>(i)].name, ckpt.params.slots[static_cast<size_t>(i)]);
  }
  w.u64(ckpt.adam.t);
  for (int i = 0; i < kParamCount; ++i) {
    w.tensor(kParamDefs[static_cast<size_t>(i)].name, ckpt.adam.m[static_cast<size_t>(i)]);
  }
  for (int i = 0; i < kParamCount; ++i) {
    w.tensor(kParamDefs[static_cast<size_t>(i)].name, ckpt.adam.v[static_cast<size_t>(i)]);
  }
  return w.bytes;
}

inline Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  using namespace ckpt_detail;
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic (expected AKWS)");
  }
  r.pos = 4;
  const uint16_t version = r.u16();
  if (version != kVersion) {
    throw CheckpointError("checkpoint: version " + std::to_string(version) + ", expected " +
                          std::to_string(kVersion));
  }
  Checkpoint ckpt;
  ckpt.task = r.str();
  ckpt.model.n_mels = static_cast<int>(r.u32());
  ckpt.model.conv1.filters = static_cast<int>(r.u32());
  ckpt.model.conv1.kernel_time = static_cast<int>(r.u32());
  ckpt.model.conv2.filters = static_cast<int>(r.u32());
  ckpt.model.conv2.kernel_time = static_cast<int>(r.u32());
  ckpt.model.lstm_hidden = static_cast<int>(r.u32());
  ckpt.model.query_dim = static_cast<int>(r.u32());
  ckpt.model.dense1 = static_cast<int>(r.u32());
  ckpt.model.dense2 = static_cast<int>(r.u32());
  ckpt.model.n_classes = static_cast<int>(r.u32());
  ckpt.dsp.n_dft = static_cast<int>(r.u32());
  ckpt.dsp.hop = static_cast<int>(r.u32());
  ckpt.dsp.n_mels = static_cast<int>(r.u32());
  ckpt.dsp.sample_rate_hz = static_cast<int>(r.u32());
  ckpt.dsp.f_min_hz = r.f64();
  ckpt.dsp.f_max_hz = r.f64();
  ckpt.dsp.log_floor = r.f64();
  ckpt.epoch = static_cast<int>(r.u32());
  ckpt.best_val_accuracy = r.f64();

  try {
    ckpt.dsp.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid stored config: ") + e.what());
  }

  const uint32_t count = r.u32();
  if (count != kParamCount) {
    throw CheckpointError("checkpoint: " + std::to_string(count) + " arrays, expected " +
                          std::to_string(int(kParamCount)));
  }
  for (int i = 0; i < kParamCount; ++i) {
    ckpt.params.slots.push_back(r.tensor(kParamDefs[static_cast<size_t>(i)].name));
  }
  ckpt.params.check_shapes(ckpt.model);
  ckpt.adam.t = r.u64();
  for (int i = 0; i < kParamCount; ++i) {
    ckpt.adam.m.push_back(r.tensor(kParamDefs[static_cast<size_t>(i)].name));
  }
  for (int i = 0; i < kParamCount; ++i) {
    ckpt.adam.v.push_back(r.tensor(kParamDefs[static_cast<size_t>(i)].name));
  }
  if (r.pos != bytes.size()) throw CheckpointError("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// --------------------------------------------------------------------------
// Training data plumbing

struct TrainExample {
  std::shared_ptr<const Tensor<float>> features;  // [T x n_mels]
  int label = -1;
};

struct TrainingData {
  std::function<std::vector<TrainExample>(int epoch)> train_epoch;
  std::vector<TrainExample> validation;
};

// Manifest-backed example source with an optional feature cache.
class FeatureLoader {
 public:
  FeatureLoader(DatasetManifest manifest, TaskSpec task, SpectrogramConfig dsp, uint32_t seed,
                bool cache_features, int threads)
      : manifest_(std::move(manifest)),
        task_(std::move(task)),
        dsp_(dsp),
        seed_(seed),
        cache_(cache_features),
        threads_(threads),
        noise_(load_noise_bank(manifest_)),
        filterbank_(mel_filterbank<float>(dsp)) {}

  const TaskSpec& task() const { return task_; }
  const NoiseBank& noise() const { return noise_; }
  const DatasetManifest& manifest() const { return manifest_; }

  std::vector<TrainExample> train_epoch(int epoch) {
    return load_all(assemble_train_epoch(manifest_, task_, noise_, seed_,
                                         static_cast<uint32_t>(epoch)));
  }

  std::vector<TrainExample> eval_split(Split split) {
    return load_all(assemble_eval_samples(manifest_, task_, noise_, split, seed_));
  }

  std::vector<TrainExample> load_all(const std::vector<SampleRef>& refs) {
    std::vector<TrainExample> out(refs.size());
    parallel_for(static_cast<int64_t>(refs.size()), threads_, [&](int64_t i) {
      out[static_cast<size_t>(i)] = load_one(refs[static_cast<size_t>(i)]);
    });
    return out;
  }

  TrainExample load_one(const SampleRef& ref) {
    const std::string key = ref.path + "#" + std::to_string(ref.crop_start);
    if (cache_) {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      auto it = cache_map_.find(key);
      if (it != cache_map_.end()) return {it->second, ref.label};
    }
    const AudioClip clip = load_sample(manifest_.root, ref, noise_);
    const Tensor<float> power = stft_power<float>(clip, dsp_);
    auto features = std::make_shared<Tensor<float>>(
        log_mel_from_power(power, filterbank_, dsp_).values);
    if (cache_) {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      cache_map_.emplace(key, features);
    }
    return {features, ref.label};
  }

 private:
  DatasetManifest manifest_;
  TaskSpec task_;
  SpectrogramConfig dsp_;
  uint32_t seed_;
  bool cache_;
  int threads_;
  NoiseBank noise_;
  Tensor<float> filterbank_;
  std::mutex cache_mutex_;
  std::unordered_map<std::string, std::shared_ptr<const Tensor<float>>> cache_map_;
};

// --------------------------------------------------------------------------
// Training loop

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochStats> history;
  int epochs_run = 0;
  // Set when a NumericError aborted training; `best` then holds the last
  // good checkpoint (if any epoch completed).
  std::string abort_reason;

  bool aborted() const { return !abort_reason.empty(); }
  bool has_best() const { return !best.params.slots.empty(); }
};

struct TrainHooks {
  // Test seam: replaces the real validation metric when set.
  std::function<double(int epoch, const AttRnnParams<float>&)> validation_metric;
  std::function<void(const EpochStats&)> on_epoch;
};

inline std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,lr,train_loss,val_accuracy\n";
  char line[128];
  for (const auto& e : history) {
    std::snprintf(line, sizeof(line), "%d,%.10g,%.9g,%.9g\n", e.epoch, e.lr, e.train_loss,
                  e.val_accuracy);
    out += line;
  }
  return out;
}

namespace train_detail {

inline constexpr uint32_t kSaltShuffle = 0xC33u;

struct ExampleResult {
  ParamTensors<float> grads;
  float loss = 0.0f;
};

inline ExampleResult backprop_example(const TrainExample& ex, const AttRnnParams<float>& params,
                                      const AttRnnConfig& cfg, const FixedBnStats<float>& stats) {
  ExampleResult result;
  Tape<float> tape;
  ParamVars<float> pv = register_param_vars(tape, params, true);
  ForwardGraph<float> graph =
      build_forward(tape, *ex.features, pv, params, cfg, BnMode::train, &stats);
  Var<float> loss = cross_entropy(graph.logits, ex.label);
  tape.backward(loss);
  result.loss = loss.value().data[0];
  result.grads.reserve(kParamCount);
  for (int i = 0; i < kParamCount; ++i) {
    if (kParamDefs[static_cast<size_t>(i)].trainable) {
      result.grads.push_back(tape.grad(pv.vars[static_cast<size_t>(i)].id));
    } else {
      result.grads.push_back(Tensor<float>());
    }
  }
  return result;
}

// Per-channel first and second moments of a [... x C] tensor, accumulated in
// double.
struct BnMoments {
  std::vector<double> sum, sumsq;
  int64_t count = 0;  // positions per channel

  void add(const Tensor<float>& t) {
    const int C = t.dim(t.rank() - 1);
    if (sum.empty()) {
      sum.assign(static_cast<size_t>(C), 0.0);
      sumsq.assign(static_cast<size_t>(C), 0.0);
    }
    const int64_t n = t.size() / C;
    for (int64_t i = 0; i < n; ++i) {
      for (int c = 0; c < C; ++c) {
        const double v = t.data[static_cast<size_t>(i) * C + c];
        sum[static_cast<size_t>(c)] += v;
        sumsq[static_cast<size_t>(c)] += v * v;
      }
    }
    count += n;
  }

  void merge(const BnMoments& other) {
    if (sum.empty()) {
      *this = other;
      return;
    }
    for (size_t c = 0; c < sum.size(); ++c) {
      sum[c] += other.sum[c];
      sumsq[c] += other.sumsq[c];
    }
    count += other.count;
  }

  // Pooled per-channel mean and biased variance.
  void finish(Tensor<float>& mean, Tensor<float>& var) const {
    const int C = static_cast<int>(sum.size());
    mean = Tensor<float>::zeros({C});
    var = Tensor<float>::zeros({C});
    for (int c = 0; c < C; ++c) {
      const double m = sum[static_cast<size_t>(c)] / static_cast<double>(count);
      const double v = sumsq[static_cast<size_t>(c)] / static_cast<double>(count) - m * m;
      mean.data[static_cast<size_t>(c)] = static_cast<float>(m);
      var.data[static_cast<size_t>(c)] = static_cast<float>(std::max(v, 0.0));
    }
  }
};

// Exact batch-norm statistics pooled over one optimizer batch. Staged because
// the second conv block's input depends on how the first was normalized:
// conv1 outputs feed bn1's pooled statistics, then bn1+relu+conv2 outputs
// feed bn2's. Per-example passes run in parallel; moments merge in
// example-index order.
inline FixedBnStats<float> pool_batch_bn_stats(const std::vector<TrainExample>& examples,
                                               const std::vector<uint32_t>& order, size_t start,
                                               size_t end, const AttRnnParams<float>& params,
                                               const AttRnnConfig& cfg, int threads) {
  const size_t n = end - start;
  FixedBnStats<float> stats;

  std::vector<Tensor<float>> conv1_out(n);
  std::vector<BnMoments> moments(n);
  parallel_for(static_cast<int64_t>(n), threads, [&](int64_t i) {
    const TrainExample& ex = examples[order[start + static_cast<size_t>(i)]];
    Tape<float> tape;
    Var<float> x = tape.leaf(*ex.features);
    Var<float> h = reshape(x, {ex.features->dim(0), cfg.n_mels, 1});
    h = conv_time(h, tape.leaf(params[kConv1Kernel]), tape.leaf(params[kConv1Bias]));
    conv1_out[static_cast<size_t>(i)] = h.value();
    moments[static_cast<size_t>(i)].add(h.value());
  });
  BnMoments pooled1;
  for (const auto& m : moments) pooled1.merge(m);
  pooled1.finish(stats.bn1_mean, stats.bn1_var);

  parallel_for(static_cast<int64_t>(n), threads, [&](int64_t i) {
    Tape<float> tape;
    Var<float> h = tape.leaf(std::move(conv1_out[static_cast<size_t>(i)]));
    h = batch_norm(h, tape.leaf(params[kBn1Gamma]), tape.leaf(params[kBn1Beta]), stats.bn1_mean,
                   stats.bn1_var, BnMode::infer, 1e-3f);
    h = relu(h);
    h = conv_time(h, tape.leaf(params[kConv2Kernel]), tape.leaf(params[kConv2Bias]));
    moments[static_cast<size_t>(i)] = BnMoments{};
    moments[static_cast<size_t>(i)].add(h.value());
  });
  BnMoments pooled2;
  for (const auto& m : moments) pooled2.merge(m);
  pooled2.finish(stats.bn2_mean, stats.bn2_var);
  return stats;
}

inline int predict_label(const TrainExample& ex, const AttRnnParams<float>& params,
                         const AttRnnConfig& cfg) {
  return forward_features(*ex.features, params, cfg).predicted_class;
}

// One optimizer step over examples[order[start..end)]. Batch-norm statistics
// are pooled over the whole batch first, so every example (and later,
// inference) normalizes the same way; per-example tapes then run in parallel
// against those constants. Gradients reduce sequentially in example-index
// order, so results are independent of the thread count. Returns the summed
// (unaveraged) loss of the batch.
inline double run_batch(const std::vector<TrainExample>& examples,
                        const std::vector<uint32_t>& order, size_t start, size_t end,
                        AttRnnParams<float>& params, AdamState<float>& adam, double lr,
                        const AttRnnConfig& model_cfg, const TrainConfig& cfg) {
  const size_t n = end - start;
  const FixedBnStats<float> stats =
      pool_batch_bn_stats(examples, order, start, end, params, model_cfg, cfg.threads);

  std::vector<ExampleResult> results(n);
  parallel_for(static_cast<int64_t>(n), cfg.threads, [&](int64_t i) {
    const TrainExample& ex = examples[order[start + static_cast<size_t>(i)]];
    results[static_cast<size_t>(i)] = backprop_example(ex, params, model_cfg, stats);
  });

  double loss_sum = 0.0;
  ParamTensors<float> grads = zeros_like_params(params);
  const float inv_n = 1.0f / static_cast<float>(n);
  for (size_t i = 0; i < n; ++i) {
    for (int s = 0; s < kParamCount; ++s) {
      if (!kParamDefs[static_cast<size_t>(s)].trainable) continue;
      auto& acc = grads[static_cast<size_t>(s)].data;
      const auto& g = results[i].grads[static_cast<size_t>(s)].data;
      for (size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
    loss_sum += static_cast<double>(results[i].loss);
  }
  for (int s = 0; s < kParamCount; ++s) {
    if (!kParamDefs[static_cast<size_t>(s)].trainable) continue;
    for (float& g : grads[static_cast<size_t>(s)].data) g *= inv_n;
  }

  adam_step(params, grads, adam, static_cast<float>(lr), cfg.adam);

  // Running averages move toward the pooled batch statistics once per step.
  // The effective momentum ramps as 1 - 1/t: a plain average of the batch
  // statistics seen so far, switching to the configured EMA once enough
  // steps have accumulated. This keeps inference usable from the first epoch
  // instead of crawling away from the (0, 1) initialization.
  const float momentum = static_cast<float>(
      std::min(cfg.bn_momentum, 1.0 - 1.0 / static_cast<double>(adam.t)));
  BatchNormState<float> s1{params[kBn1RunningMean], params[kBn1RunningVar], momentum};
  s1.fold(BnObserved<float>{stats.bn1_mean.data, stats.bn1_var.data});
  BatchNormState<float> s2{params[kBn2RunningMean], params[kBn2RunningVar], momentum};
  s2.fold(BnObserved<float>{stats.bn2_mean.data, stats.bn2_var.data});
  params[kBn1RunningMean] = s1.running_mean;
  params[kBn1RunningVar] = s1.running_var;
  params[kBn2RunningMean] = s2.running_mean;
  params[kBn2RunningVar] = s2.running_var;
  return loss_sum;
}

}  // namespace train_detail

// Infer-mode accuracy over a labeled example set.
inline double accuracy_on(const std::vector<TrainExample>& examples,
                          const AttRnnParams<float>& params, const AttRnnConfig& cfg,
                          int threads = 0) {
  if (examples.empty()) throw ConfigError("accuracy_on: empty example set");
  std::vector<uint8_t> correct(examples.size(), 0);
  parallel_for(static_cast<int64_t>(examples.size()), threads, [&](int64_t i) {
    const auto& ex = examples[static_cast<size_t>(i)];
    correct[static_cast<size_t>(i)] =
        train_detail::predict_label(ex, params, cfg) == ex.label ? 1 : 0;
  });
  int64_t n_correct = 0;
  for (uint8_t c : correct) n_correct += c;
  return static_cast<double>(n_correct) / static_cast<double>(examples.size());
}

// Full training run. Returns the checkpoint with the best validation
// accuracy (strict improvement only, so ties keep the earliest) plus the
// per-epoch history. Stops at max_epochs or after `patience` consecutive
// epochs without improvement.
inline TrainResult train(const TrainingData& data, const AttRnnConfig& model_cfg,
                         const SpectrogramConfig& dsp_cfg, const TrainConfig& cfg,
                         const std::string& task_name = "", const TrainHooks& hooks = {}) {
  model_cfg.validate();
  cfg.validate();

  AttRnnParams<float> params = init_params<float>(model_cfg, cfg.seed);
  AdamState<float> adam = AdamState<float>::fresh(params);

  TrainResult result;
  double best_acc = -1.0;
  int wait = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochStats stats;
    try {
      const double lr = lr_at(epoch, cfg);
      std::vector<TrainExample> examples = data.train_epoch(epoch);
      if (examples.empty()) throw ConfigError("train: empty training epoch");

      std::vector<uint32_t> order(examples.size());
      for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng = Rng::for_epoch(cfg.seed, static_cast<uint32_t>(epoch),
                                       train_detail::kSaltShuffle);
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0;
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
        loss_sum += train_detail::run_batch(examples, order, start, end, params, adam, lr,
                                            model_cfg, cfg);
      }

      stats.epoch = epoch;
      stats.lr = lr;
      stats.train_loss = loss_sum / static_cast<double>(examples.size());
      stats.val_accuracy = hooks.validation_metric
                               ? hooks.validation_metric(epoch, params)
                               : accuracy_on(data.validation, params, model_cfg, cfg.threads);
    } catch (const NumericError& e) {
      // Abort but keep the last good checkpoint; the caller decides whether
      // to persist it.
      result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    result.history.push_back(stats);
    result.epochs_run = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(stats);

    if (stats.val_accuracy > best_acc) {
      best_acc = stats.val_accuracy;
      result.best = Checkpoint{model_cfg, dsp_cfg, task_name, params,
                               adam,      epoch,   stats.val_accuracy};
      wait = 0;
    } else {
      ++wait;
    }
    if (wait >= cfg.patience) break;
  }
  return result;
}

}  // namespace attkws
