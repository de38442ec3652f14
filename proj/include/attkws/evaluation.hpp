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
#include <cstdio>
#include <string>
#include <tuple>
#include <vector>

#include "attkws/dataset.hpp"
#include "attkws/errors.hpp"
#include "attkws/io_util.hpp"
#include "attkws/model.hpp"
#include "attkws/training.hpp"

namespace attkws {

// Rows are true classes, columns are predictions.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<int64_t> counts;

  static ConfusionMatrix zeros(std::vector<std::string> labels_in) {
    ConfusionMatrix m;
    m.labels = std::move(labels_in);
    m.counts.assign(m.labels.size() * m.labels.size(), 0);
    return m;
  }

  int n() const { return static_cast<int>(labels.size()); }
  int64_t& at(int t, int p) { return counts[static_cast<size_t>(t) * labels.size() + p]; }
  int64_t at(int t, int p) const { return counts[static_cast<size_t>(t) * labels.size() + p]; }

  int64_t total() const {
    int64_t s = 0;
    for (int64_t c : counts) s += c;
    return s;
  }
  int64_t diagonal() const {
    int64_t s = 0;
    for (int i = 0; i < n(); ++i) s += at(i, i);
    return s;
  }
  int64_t row_sum(int t) const {
    int64_t s = 0;
    for (int p = 0; p < n(); ++p) s += at(t, p);
    return s;
  }

  std::string to_csv() const {
    std::string out = "true_label";
    for (const auto& l : labels) out += "," + l;
    out += "\n";
    for (int t = 0; t < n(); ++t) {
      out += labels[static_cast<size_t>(t)];
      for (int p = 0; p < n(); ++p) out += "," + std::to_string(at(t, p));
      out += "\n";
    }
    return out;
  }
};

struct EvalReport {
  double overall_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  ConfusionMatrix confusion;
  int64_t n_samples = 0;
};

// Aggregate (true, predicted) pairs. Accuracy is exact integer counting with
// a single final division.
inline EvalReport report_from_predictions(const std::vector<std::pair<int, int>>& true_pred,
                                          std::vector<std::string> labels) {
  EvalReport report;
  report.confusion = ConfusionMatrix::zeros(std::move(labels));
  const int n = report.confusion.n();
  for (const auto& [t, p] : true_pred) {
    if (t < 0 || t >= n || p < 0 || p >= n) throw ShapeError("evaluate: class index out of range");
    ++report.confusion.at(t, p);
  }
  report.n_samples = static_cast<int64_t>(true_pred.size());
  if (report.n_samples == 0) throw ConfigError("evaluate: empty sample set");
  report.overall_accuracy = static_cast<double>(report.confusion.diagonal()) /
                            static_cast<double>(report.n_samples);
  report.per_class_accuracy.resize(static_cast<size_t>(n), 0.0);
  for (int t = 0; t < n; ++t) {
    const int64_t support = report.confusion.row_sum(t);
    report.per_class_accuracy[static_cast<size_t>(t)] =
        support > 0 ? static_cast<double>(report.confusion.at(t, t)) / static_cast<double>(support)
                    : 0.0;
  }
  return report;
}

inline EvalReport evaluate_examples(const std::vector<TrainExample>& examples,
                                    const AttRnnParams<float>& params, const AttRnnConfig& cfg,
                                    std::vector<std::string> labels, int threads = 0) {
  std::vector<int> preds(examples.size());
  parallel_for(static_cast<int64_t>(examples.size()), threads, [&](int64_t i) {
    preds[static_cast<size_t>(i)] =
        forward_features(*examples[static_cast<size_t>(i)].features, params, cfg).predicted_class;
  });
  std::vector<std::pair<int, int>> pairs(examples.size());
  for (size_t i = 0; i < examples.size(); ++i) pairs[i] = {examples[i].label, preds[i]};
  return report_from_predictions(pairs, std::move(labels));
}

// Evaluate a checkpoint over one dataset split.
inline EvalReport evaluate(const Checkpoint& ckpt, FeatureLoader& loader, Split split,
                           int threads = 0) {
  const TaskSpec& task = loader.task();
  if (!ckpt.task.empty() && ckpt.task != to_string(task.name)) {
    throw ConfigError("evaluate: checkpoint was trained for task '" + ckpt.task +
                      "', requested '" + to_string(task.name) + "'");
  }
  if (ckpt.model.n_classes != task.n_classes()) {
    throw ConfigError("evaluate: checkpoint has " + std::to_string(ckpt.model.n_classes) +
                      " classes, task needs " + std::to_string(task.n_classes()));
  }
  return evaluate_examples(loader.eval_split(split), ckpt.params, ckpt.model, task.target_labels,
                           threads);
}

inline std::string report_to_json(const EvalReport& report) {
  char buf[64];
  std::string out = "{\n";
  std::snprintf(buf, sizeof(buf), "%.9g", report.overall_accuracy);
  out += "  \"overall_accuracy\": " + std::string(buf) + ",\n";
  out += "  \"n_samples\": " + std::to_string(report.n_samples) + ",\n";
  out += "  \"per_class_accuracy\": {\n";
  for (int i = 0; i < report.confusion.n(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g", report.per_class_accuracy[static_cast<size_t>(i)]);
    out += "    \"" + report.confusion.labels[static_cast<size_t>(i)] + "\": " + buf;
    out += i + 1 < report.confusion.n() ? ",\n" : "\n";
  }
  out += "  }\n}\n";
  return out;
}

// Off-diagonal cells with nonzero counts, by count descending, ties by
// (true, predicted) index.
struct ConfusionCell {
  std::string true_label;
  std::string predicted_label;
  int64_t count = 0;
};

inline std::vector<ConfusionCell> top_confusions(const ConfusionMatrix& m, int k) {
  if (k < 1) throw ConfigError("top_confusions: k must be >= 1");
  std::vector<std::tuple<int64_t, int, int>> cells;
  for (int t = 0; t < m.n(); ++t) {
    for (int p = 0; p < m.n(); ++p) {
      if (t != p && m.at(t, p) > 0) cells.emplace_back(m.at(t, p), t, p);
    }
  }
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  if (static_cast<int>(cells.size()) > k) cells.resize(static_cast<size_t>(k));
  std::vector<ConfusionCell> out;
  out.reserve(cells.size());
  for (const auto& [count, t, p] : cells) {
    out.push_back({m.labels[static_cast<size_t>(t)], m.labels[static_cast<size_t>(p)], count});
  }
  return out;
}

// --------------------------------------------------------------------------
// Attention trace export: per-frame weights with a log10 view floored at -20,
// plus the prediction and class probabilities as header comments. Weights are
// taken verbatim from the forward trace.

inline std::string attention_trace_csv(const AttentionTrace& trace,
                                       const std::vector<std::string>& labels,
                                       double hop_seconds) {
  if (labels.size() != trace.logits.size()) {
    throw ShapeError("attention export: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(trace.logits.size()) + " classes");
  }
  const std::vector<double> probs = softmax_probs(trace.logits);
  char buf[96];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%.6f", probs[static_cast<size_t>(trace.predicted_class)]);
  out += "# predicted=" + labels[static_cast<size_t>(trace.predicted_class)] + " prob=" + buf +
         "\n";
  out += "# class_probabilities=";
  for (size_t i = 0; i < probs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", probs[i]);
    out += labels[i] + ":" + buf;
    if (i + 1 < probs.size()) out += ",";
  }
  out += "\n# query_frame=" + std::to_string(trace.query_frame_index) + "\n";
  out += "frame,time_s,weight,log10_weight\n";
  for (size_t f = 0; f < trace.weights.size(); ++f) {
    const double w = trace.weights[f];
    const double lw = std::max(std::log10(std::max(w, 0.0)), -20.0);
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.9g,%.9g\n", f,
                  static_cast<double>(f) * hop_seconds, w, lw);
    out += buf;
  }
  return out;
}

}  // namespace attkws
