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

// The attention BiLSTM classifier.
//
// Pipeline: log-mel features [T x nMel] -> time-only conv (10 filters) + BN +
// relu -> time-only conv (1 filter) + BN + relu -> squeeze channel ->
// BiLSTM x2 (64 per direction) -> dot-product attention queried by a dense
// projection of the middle frame -> dense 64 relu -> dense 32 relu -> dense
// nClasses logits. Softmax is applied in the loss / reporting path only.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "attkws/audio.hpp"
#include "attkws/autodiff.hpp"
#include "attkws/dsp.hpp"
#include "attkws/errors.hpp"
#include "attkws/rng.hpp"
#include "attkws/tensor.hpp"

namespace attkws {

struct ConvSpec {
  int filters = 1;
  int kernel_time = 5;
};

struct AttRnnConfig {
  int n_mels = 80;
  ConvSpec conv1{10, 5};
  ConvSpec conv2{1, 5};
  int lstm_hidden = 64;   // per direction; two stacked bidirectional layers
  int query_dim = 128;
  int dense1 = 64;
  int dense2 = 32;
  int n_classes = 12;

  void validate() const {
    if (n_mels <= 0 || lstm_hidden <= 0 || dense1 <= 0 || dense2 <= 0) {
      throw ConfigError("model: dimensions must be positive");
    }
    if (n_classes < 2) throw ConfigError("model: need at least two classes");
    if (conv1.filters <= 0 || conv2.filters != 1) {
      throw ConfigError("model: conv2 must emit exactly one channel for the squeeze");
    }
    if (conv1.kernel_time % 2 == 0 || conv2.kernel_time % 2 == 0) {
      throw ConfigError("model: conv kernels must have odd time extent");
    }
    if (query_dim != 2 * lstm_hidden) {
      throw ConfigError("model: query_dim must equal 2 * lstm_hidden (dot-product attention)");
    }
  }
};

// --------------------------------------------------------------------------
// Parameter registry. Slots are index-addressable so gradients, optimizer
// moments and checkpoints stay aligned with a single fixed order.

enum ParamId : int {
  kConv1Kernel = 0,
  kConv1Bias,
  kBn1Gamma,
  kBn1Beta,
  kBn1RunningMean,
  kBn1RunningVar,
  kConv2Kernel,
  kConv2Bias,
  kBn2Gamma,
  kBn2Beta,
  kBn2RunningMean,
  kBn2RunningVar,
  kLstm1FwdW,
  kLstm1FwdU,
  kLstm1FwdB,
  kLstm1BwdW,
  kLstm1BwdU,
  kLstm1BwdB,
  kLstm2FwdW,
  kLstm2FwdU,
  kLstm2FwdB,
  kLstm2BwdW,
  kLstm2BwdU,
  kLstm2BwdB,
  kQueryW,
  kQueryB,
  kDense1W,
  kDense1B,
  kDense2W,
  kDense2B,
  kOutW,
  kOutB,
  kParamCount
};

struct ParamDef {
  const char* name;
  const char* layer;  // grouping for the parameter-count table
  bool trainable;
};

inline constexpr std::array<ParamDef, kParamCount> kParamDefs = {{
    {"conv1.kernel", "conv1", true},
    {"conv1.bias", "conv1", true},
    {"bn1.gamma", "bn1", true},
    {"bn1.beta", "bn1", true},
    {"bn1.running_mean", "bn1", false},
    {"bn1.running_var", "bn1", false},
    {"conv2.kernel", "conv2", true},
    {"conv2.bias", "conv2", true},
    {"bn2.gamma", "bn2", true},
    {"bn2.beta", "bn2", true},
    {"bn2.running_mean", "bn2", false},
    {"bn2.running_var", "bn2", false},
    {"lstm1.fwd.W", "bilstm1", true},
    {"lstm1.fwd.U", "bilstm1", true},
    {"lstm1.fwd.b", "bilstm1", true},
    {"lstm1.bwd.W", "bilstm1", true},
    {"lstm1.bwd.U", "bilstm1", true},
    {"lstm1.bwd.b", "bilstm1", true},
    {"lstm2.fwd.W", "bilstm2", true},
    {"lstm2.fwd.U", "bilstm2", true},
    {"lstm2.fwd.b", "bilstm2", true},
    {"lstm2.bwd.W", "bilstm2", true},
    {"lstm2.bwd.U", "bilstm2", true},
    {"lstm2.bwd.b", "bilstm2", true},
    {"query.W", "query", true},
    {"query.b", "query", true},
    {"dense1.W", "dense1", true},
    {"dense1.b", "dense1", true},
    {"dense2.W", "dense2", true},
    {"dense2.b", "dense2", true},
    {"out.W", "output", true},
    {"out.b", "output", true},
}};

inline std::vector<Shape> param_shapes(const AttRnnConfig& cfg) {
  cfg.validate();
  const int H = cfg.lstm_hidden;
  const int c1 = cfg.conv1.filters;
  std::vector<Shape> shapes(kParamCount);
  shapes[kConv1Kernel] = {cfg.conv1.kernel_time, 1, 1, c1};
  shapes[kConv1Bias] = {c1};
  shapes[kBn1Gamma] = shapes[kBn1Beta] = shapes[kBn1RunningMean] = shapes[kBn1RunningVar] = {c1};
  shapes[kConv2Kernel] = {cfg.conv2.kernel_time, 1, c1, 1};
  shapes[kConv2Bias] = {1};
  shapes[kBn2Gamma] = shapes[kBn2Beta] = shapes[kBn2RunningMean] = shapes[kBn2RunningVar] = {1};
  shapes[kLstm1FwdW] = shapes[kLstm1BwdW] = {cfg.n_mels, 4 * H};
  shapes[kLstm1FwdU] = shapes[kLstm1BwdU] = {H, 4 * H};
  shapes[kLstm1FwdB] = shapes[kLstm1BwdB] = {4 * H};
  shapes[kLstm2FwdW] = shapes[kLstm2BwdW] = {2 * H, 4 * H};
  shapes[kLstm2FwdU] = shapes[kLstm2BwdU] = {H, 4 * H};
  shapes[kLstm2FwdB] = shapes[kLstm2BwdB] = {4 * H};
  shapes[kQueryW] = {2 * H, cfg.query_dim};
  shapes[kQueryB] = {cfg.query_dim};
  shapes[kDense1W] = {2 * H, cfg.dense1};
  shapes[kDense1B] = {cfg.dense1};
  shapes[kDense2W] = {cfg.dense1, cfg.dense2};
  shapes[kDense2B] = {cfg.dense2};
  shapes[kOutW] = {cfg.dense2, cfg.n_classes};
  shapes[kOutB] = {cfg.n_classes};
  return shapes;
}

template <class Real>
struct AttRnnParams {
  std::vector<Tensor<Real>> slots;

  Tensor<Real>& operator[](ParamId id) { return slots[static_cast<size_t>(id)]; }
  const Tensor<Real>& operator[](ParamId id) const { return slots[static_cast<size_t>(id)]; }

  static AttRnnParams zeros(const AttRnnConfig& cfg) {
    AttRnnParams p;
    for (Shape& s : param_shapes(cfg)) p.slots.push_back(Tensor<Real>::zeros(std::move(s)));
    return p;
  }

  void check_shapes(const AttRnnConfig& cfg) const {
    const auto shapes = param_shapes(cfg);
    if (slots.size() != shapes.size()) throw ShapeError("params: slot count mismatch");
    for (size_t i = 0; i < shapes.size(); ++i) {
      if (slots[i].shape != shapes[i]) {
        throw ShapeError(std::string("params: ") + kParamDefs[i].name + " has shape " +
                         shape_str(slots[i].shape) + ", expected " + shape_str(shapes[i]));
      }
    }
  }
};

// Gradients / optimizer moments aligned with the slot order.
template <class Real>
using ParamTensors = std::vector<Tensor<Real>>;

template <class Real>
ParamTensors<Real> zeros_like_params(const AttRnnParams<Real>& params) {
  ParamTensors<Real> out;
  out.reserve(params.slots.size());
  for (const auto& t : params.slots) out.push_back(Tensor<Real>::zeros(t.shape));
  return out;
}

// --------------------------------------------------------------------------
// Parameter counting

struct ParamCount {
  struct Layer {
    std::string name;
    int64_t count;
  };
  std::vector<Layer> layers;
  int64_t total = 0;
};

inline ParamCount count_params(const AttRnnConfig& cfg) {
  const auto shapes = param_shapes(cfg);
  ParamCount out;
  for (int i = 0; i < kParamCount; ++i) {
    if (!kParamDefs[static_cast<size_t>(i)].trainable) continue;
    const std::string layer = kParamDefs[static_cast<size_t>(i)].layer;
    const int64_t n = numel(shapes[static_cast<size_t>(i)]);
    if (!out.layers.empty() && out.layers.back().name == layer) {
      out.layers.back().count += n;
    } else {
      out.layers.push_back({layer, n});
    }
    out.total += n;
  }
  return out;
}

// --------------------------------------------------------------------------
// Initialization

inline double glorot_limit(int64_t fan_in, int64_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace model_detail {

template <class Real>
void fill_uniform(Tensor<Real>& t, Rng& rng, double limit) {
  for (Real& v : t.data) v = static_cast<Real>(rng.uniform(-limit, limit));
}

// Random square orthogonal matrix: Gaussian columns passed twice through
// modified Gram-Schmidt.
inline std::vector<double> orthogonal_square(int n, Rng& rng) {
  std::vector<double> q(static_cast<size_t>(n) * n);
  for (double& v : q) v = rng.normal();
  for (int j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (int prev = 0; prev < j; ++prev) {
        double dot = 0;
        for (int i = 0; i < n; ++i) {
          dot += q[static_cast<size_t>(i) * n + j] * q[static_cast<size_t>(i) * n + prev];
        }
        for (int i = 0; i < n; ++i) {
          q[static_cast<size_t>(i) * n + j] -= dot * q[static_cast<size_t>(i) * n + prev];
        }
      }
    }
    double norm = 0;
    for (int i = 0; i < n; ++i) {
      norm += q[static_cast<size_t>(i) * n + j] * q[static_cast<size_t>(i) * n + j];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("orthogonal init: degenerate column");
    for (int i = 0; i < n; ++i) q[static_cast<size_t>(i) * n + j] /= norm;
  }
  return q;
}

// Recurrent kernel [H x 4H]: one independent orthogonal block per gate.
template <class Real>
void fill_recurrent_orthogonal(Tensor<Real>& u, int hidden, Rng& rng) {
  for (int gate = 0; gate < 4; ++gate) {
    const std::vector<double> q = orthogonal_square(hidden, rng);
    for (int i = 0; i < hidden; ++i) {
      for (int j = 0; j < hidden; ++j) {
        u.at2(i, gate * hidden + j) = static_cast<Real>(q[static_cast<size_t>(i) * hidden + j]);
      }
    }
  }
}

template <class Real>
void fill_lstm_bias(Tensor<Real>& b, int hidden) {
  // zeros except the forget-gate block, which starts at one
  for (int i = 0; i < hidden; ++i) b.data[static_cast<size_t>(hidden + i)] = Real(1);
}

}  // namespace model_detail

template <class Real>
AttRnnParams<Real> init_params(const AttRnnConfig& cfg, uint32_t seed) {
  using namespace model_detail;
  AttRnnParams<Real> p = AttRnnParams<Real>::zeros(cfg);
  Rng rng(seed);
  const int H = cfg.lstm_hidden;

  fill_uniform(p[kConv1Kernel], rng,
               glorot_limit(cfg.conv1.kernel_time * 1, cfg.conv1.kernel_time * cfg.conv1.filters));
  fill_uniform(p[kConv2Kernel], rng,
               glorot_limit(cfg.conv2.kernel_time * cfg.conv1.filters, cfg.conv2.kernel_time * 1));
  for (ParamId id : {kBn1Gamma, kBn2Gamma, kBn1RunningVar, kBn2RunningVar}) {
    for (Real& v : p[id].data) v = Real(1);
  }

  for (ParamId id : {kLstm1FwdW, kLstm1BwdW}) {
    fill_uniform(p[id], rng, glorot_limit(cfg.n_mels, 4 * H));
  }
  for (ParamId id : {kLstm2FwdW, kLstm2BwdW}) {
    fill_uniform(p[id], rng, glorot_limit(2 * H, 4 * H));
  }
  for (ParamId id : {kLstm1FwdU, kLstm1BwdU, kLstm2FwdU, kLstm2BwdU}) {
    fill_recurrent_orthogonal(p[id], H, rng);
  }
  for (ParamId id : {kLstm1FwdB, kLstm1BwdB, kLstm2FwdB, kLstm2BwdB}) {
    fill_lstm_bias(p[id], H);
  }

  fill_uniform(p[kQueryW], rng, glorot_limit(2 * H, cfg.query_dim));
  fill_uniform(p[kDense1W], rng, glorot_limit(2 * H, cfg.dense1));
  fill_uniform(p[kDense2W], rng, glorot_limit(cfg.dense1, cfg.dense2));
  fill_uniform(p[kOutW], rng, glorot_limit(cfg.dense2, cfg.n_classes));
  return p;
}

// --------------------------------------------------------------------------
// Forward graph

template <class Real>
struct ParamVars {
  std::array<Var<Real>, kParamCount> vars;
  Var<Real> operator[](ParamId id) const { return vars[static_cast<size_t>(id)]; }
};

template <class Real>
ParamVars<Real> register_param_vars(Tape<Real>& tape, const AttRnnParams<Real>& params,
                                    bool trainable) {
  ParamVars<Real> pv;
  for (int i = 0; i < kParamCount; ++i) {
    const bool needs_grad = trainable && kParamDefs[static_cast<size_t>(i)].trainable;
    pv.vars[static_cast<size_t>(i)] = tape.leaf(params.slots[static_cast<size_t>(i)], needs_grad);
  }
  return pv;
}

template <class Real>
struct AttendResult {
  Var<Real> context;  // [2H]
  Var<Real> weights;  // [T]
  int query_frame_index = 0;
};

// Dot-product attention queried by a dense projection of the middle frame.
template <class Real>
AttendResult<Real> attend(Var<Real> lstm_out, Var<Real> query_w, Var<Real> query_b) {
  const Tensor<Real>& lv = lstm_out.value();
  if (lv.rank() != 2 || lv.dim(0) < 1) throw ShapeError("attend: lstm output must be [T x D]");
  const int mid = lv.dim(0) / 2;
  Var<Real> query = add(vecmat(row(lstm_out, mid), query_w), query_b);
  Var<Real> scores = matvec(lstm_out, query);
  Var<Real> weights = softmax(scores);
  Var<Real> context = mean_weighted(lstm_out, weights);
  return {context, weights, mid};
}

template <class Real>
struct ForwardGraph {
  Var<Real> logits;
  Var<Real> att_weights;
  int query_frame_index = 0;
  BnObserved<Real> bn1;
  BnObserved<Real> bn2;
};

// Externally supplied batch-norm statistics. The trainer pools these over a
// whole optimizer batch so every example in the batch is normalized the same
// way (and the same way inference will normalize, up to the running-average
// lag); the statistics act as constants on the tape.
template <class Real>
struct FixedBnStats {
  Tensor<Real> bn1_mean, bn1_var;
  Tensor<Real> bn2_mean, bn2_var;
};

namespace model_detail {

template <class Fn>
auto layer_scope(const char* layer, Fn&& fn) {
  try {
    return fn();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(layer) + ": " + e.what());
  }
}

}  // namespace model_detail

// Features [T x n_mels] through the network. `mode` selects the batch-norm
// statistics (the example's own in train mode, the stored running averages in
// infer mode); observed batch stats are returned for the caller to fold. When
// `fixed` is given it overrides both: normalization uses the supplied
// statistics as constants, which is how the trainer applies batch-pooled
// statistics while keeping per-example tapes independent.
template <class Real>
ForwardGraph<Real> build_forward(Tape<Real>& tape, const Tensor<Real>& features,
                                 const ParamVars<Real>& pv, const AttRnnParams<Real>& params,
                                 const AttRnnConfig& cfg, BnMode mode,
                                 const FixedBnStats<Real>* fixed = nullptr) {
  using model_detail::layer_scope;
  if (features.rank() != 2 || features.dim(1) != cfg.n_mels) {
    throw ShapeError("features: expected [T x " + std::to_string(cfg.n_mels) + "], got " +
                     shape_str(features.shape));
  }
  const int T = features.dim(0);
  ForwardGraph<Real> graph;

  Var<Real> x = tape.leaf(features);
  Var<Real> h = reshape(x, {T, cfg.n_mels, 1});
  h = layer_scope("conv1", [&] { return conv_time(h, pv[kConv1Kernel], pv[kConv1Bias]); });
  h = layer_scope("bn1", [&] {
    if (fixed) {
      return batch_norm(h, pv[kBn1Gamma], pv[kBn1Beta], fixed->bn1_mean, fixed->bn1_var,
                        BnMode::infer, Real(1e-3));
    }
    return batch_norm(h, pv[kBn1Gamma], pv[kBn1Beta], params[kBn1RunningMean],
                      params[kBn1RunningVar], mode, Real(1e-3),
                      mode == BnMode::train ? &graph.bn1 : nullptr);
  });
  h = relu(h);
  h = layer_scope("conv2", [&] { return conv_time(h, pv[kConv2Kernel], pv[kConv2Bias]); });
  h = layer_scope("bn2", [&] {
    if (fixed) {
      return batch_norm(h, pv[kBn2Gamma], pv[kBn2Beta], fixed->bn2_mean, fixed->bn2_var,
                        BnMode::infer, Real(1e-3));
    }
    return batch_norm(h, pv[kBn2Gamma], pv[kBn2Beta], params[kBn2RunningMean],
                      params[kBn2RunningVar], mode, Real(1e-3),
                      mode == BnMode::train ? &graph.bn2 : nullptr);
  });
  h = relu(h);
  Var<Real> seq = reshape(h, {T, cfg.n_mels});  // squeeze the single channel

  const int H = cfg.lstm_hidden;
  Var<Real> l1 = layer_scope("bilstm1", [&] {
    return bilstm(seq, LstmDirParamVars<Real>{pv[kLstm1FwdW], pv[kLstm1FwdU], pv[kLstm1FwdB]},
                  LstmDirParamVars<Real>{pv[kLstm1BwdW], pv[kLstm1BwdU], pv[kLstm1BwdB]}, H);
  });
  Var<Real> l2 = layer_scope("bilstm2", [&] {
    return bilstm(l1, LstmDirParamVars<Real>{pv[kLstm2FwdW], pv[kLstm2FwdU], pv[kLstm2FwdB]},
                  LstmDirParamVars<Real>{pv[kLstm2BwdW], pv[kLstm2BwdU], pv[kLstm2BwdB]}, H);
  });

  AttendResult<Real> att =
      layer_scope("attention", [&] { return attend(l2, pv[kQueryW], pv[kQueryB]); });
  graph.att_weights = att.weights;
  graph.query_frame_index = att.query_frame_index;

  Var<Real> d = layer_scope("dense1", [&] {
    return relu(add(vecmat(att.context, pv[kDense1W]), pv[kDense1B]));
  });
  d = layer_scope("dense2", [&] { return relu(add(vecmat(d, pv[kDense2W]), pv[kDense2B])); });
  graph.logits = layer_scope("output", [&] { return add(vecmat(d, pv[kOutW]), pv[kOutB]); });
  return graph;
}

// --------------------------------------------------------------------------
// Whole-clip forward

// Attention weights and logits for one clip, aligned to spectrogram frames.
struct AttentionTrace {
  std::vector<double> weights;
  int query_frame_index = 0;
  int predicted_class = 0;
  std::vector<double> logits;
};

inline std::vector<double> softmax_probs(const std::vector<double>& logits) {
  std::vector<double> p = logits;
  double mx = p[0];
  for (double v : p) mx = std::max(mx, v);
  double denom = 0;
  for (double& v : p) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : p) v /= denom;
  return p;
}

template <class Real>
AttentionTrace trace_from_graph(const ForwardGraph<Real>& graph) {
  AttentionTrace trace;
  const Tensor<Real>& wv = graph.att_weights.value();
  trace.weights.assign(wv.data.begin(), wv.data.end());
  trace.query_frame_index = graph.query_frame_index;
  const Tensor<Real>& lv = graph.logits.value();
  trace.logits.assign(lv.data.begin(), lv.data.end());
  trace.predicted_class = static_cast<int>(
      std::max_element(trace.logits.begin(), trace.logits.end()) - trace.logits.begin());
  return trace;
}

template <class Real>
AttentionTrace forward_features(const Tensor<Real>& features, const AttRnnParams<Real>& params,
                                const AttRnnConfig& cfg, BnMode mode = BnMode::infer,
                                BnObserved<Real>* bn1 = nullptr, BnObserved<Real>* bn2 = nullptr) {
  Tape<Real> tape;
  ParamVars<Real> pv = register_param_vars(tape, params, false);
  ForwardGraph<Real> graph = build_forward(tape, features, pv, params, cfg, mode);
  if (bn1) *bn1 = graph.bn1;
  if (bn2) *bn2 = graph.bn2;
  return trace_from_graph(graph);
}

// Infer-mode forward: a pure function of (clip, params).
template <class Real>
AttentionTrace forward(const AudioClip& clip, const AttRnnParams<Real>& params,
                       const AttRnnConfig& cfg, const SpectrogramConfig& dsp_cfg) {
  params.check_shapes(cfg);
  const MelSpectrogram<Real> mel = log_mel<Real>(clip, dsp_cfg);
  return forward_features(mel.values, params, cfg, BnMode::infer);
}

// Mode-selectable forward; train mode folds the observed batch statistics
// into the running averages, mutating `params`.
template <class Real>
AttentionTrace forward(const AudioClip& clip, AttRnnParams<Real>& params, const AttRnnConfig& cfg,
                       const SpectrogramConfig& dsp_cfg, BnMode mode,
                       Real bn_momentum = Real(0.99)) {
  params.check_shapes(cfg);
  const MelSpectrogram<Real> mel = log_mel<Real>(clip, dsp_cfg);
  BnObserved<Real> bn1, bn2;
  AttentionTrace trace = forward_features(mel.values, params, cfg, mode, &bn1, &bn2);
  if (mode == BnMode::train) {
    BatchNormState<Real> s1{params[kBn1RunningMean], params[kBn1RunningVar], bn_momentum};
    s1.fold(bn1);
    params[kBn1RunningMean] = s1.running_mean;
    params[kBn1RunningVar] = s1.running_var;
    BatchNormState<Real> s2{params[kBn2RunningMean], params[kBn2RunningVar], bn_momentum};
    s2.fold(bn2);
    params[kBn2RunningMean] = s2.running_mean;
    params[kBn2RunningVar] = s2.running_var;
  }
  return trace;
}

}  // namespace attkws
