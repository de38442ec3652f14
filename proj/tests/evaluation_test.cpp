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
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "attkws/attention_svg.hpp"
#include "attkws/evaluation.hpp"
#include "attkws/rng.hpp"

namespace attkws {
namespace {

TEST(Report, PerfectPredictorIsIdentity) {
  std::vector<std::pair<int, int>> pairs;
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 4; ++i) pairs.push_back({t, t});
  }
  const EvalReport r = report_from_predictions(pairs, {"a", "b", "c"});
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 1.0);
  EXPECT_EQ(r.n_samples, 12);
  for (int t = 0; t < 3; ++t) {
    for (int p = 0; p < 3; ++p) EXPECT_EQ(r.confusion.at(t, p), t == p ? 4 : 0);
    EXPECT_DOUBLE_EQ(r.per_class_accuracy[static_cast<size_t>(t)], 1.0);
  }
}

TEST(Report, ConstantPredictorHasOneDenseColumn) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back({i % 2, 0});
  const EvalReport r = report_from_predictions(pairs, {"x", "y"});
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.5);
  EXPECT_EQ(r.confusion.at(0, 0), 5);
  EXPECT_EQ(r.confusion.at(1, 0), 5);
  EXPECT_EQ(r.confusion.at(0, 1), 0);
  EXPECT_EQ(r.confusion.at(1, 1), 0);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[0], 1.0);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[1], 0.0);
}

TEST(Report, HandAssembledFixture) {
  // Five clips with known predictions: (0->0), (0->2), (1->1), (2->1), (2->2).
  const std::vector<std::pair<int, int>> pairs = {{0, 0}, {0, 2}, {1, 1}, {2, 1}, {2, 2}};
  const EvalReport r = report_from_predictions(pairs, {"a", "b", "c"});
  EXPECT_EQ(r.n_samples, 5);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 3.0 / 5.0);
  EXPECT_EQ(r.confusion.at(0, 0), 1);
  EXPECT_EQ(r.confusion.at(0, 2), 1);
  EXPECT_EQ(r.confusion.at(1, 1), 1);
  EXPECT_EQ(r.confusion.at(2, 1), 1);
  EXPECT_EQ(r.confusion.at(2, 2), 1);
  EXPECT_EQ(r.confusion.diagonal(), 3);
  EXPECT_EQ(r.confusion.row_sum(0), 2);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[0], 0.5);
}

TEST(Report, PermutationInvariant) {
  Rng rng(61);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 200; ++i) {
    pairs.push_back({static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4))});
  }
  const EvalReport a = report_from_predictions(pairs, {"a", "b", "c", "d"});
  rng.shuffle(pairs);
  const EvalReport b = report_from_predictions(pairs, {"a", "b", "c", "d"});
  EXPECT_EQ(a.confusion.counts, b.confusion.counts);
  EXPECT_DOUBLE_EQ(a.overall_accuracy, b.overall_accuracy);
}

TEST(Report, AccuracyIsExactRatio) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 3; ++i) pairs.push_back({0, 0});
  for (int i = 0; i < 7; ++i) pairs.push_back({0, 1});
  const EvalReport r = report_from_predictions(pairs, {"a", "b"});
  EXPECT_EQ(r.overall_accuracy, 3.0 / 10.0);
  EXPECT_EQ(static_cast<double>(r.confusion.diagonal()) / static_cast<double>(r.n_samples),
            r.overall_accuracy);
}

TEST(Report, JsonAndCsvShapes) {
  const std::vector<std::pair<int, int>> pairs = {{0, 0}, {1, 0}};
  const EvalReport r = report_from_predictions(pairs, {"up", "down"});
  const std::string json = report_to_json(r);
  EXPECT_NE(json.find("\"overall_accuracy\": 0.5"), std::string::npos);
  EXPECT_NE(json.find("\"n_samples\": 2"), std::string::npos);
  EXPECT_NE(json.find("\"down\": 0"), std::string::npos);
  const std::string csv = r.confusion.to_csv();
  EXPECT_EQ(csv, "true_label,up,down\nup,1,0\ndown,1,0\n");
}

TEST(TopConfusions, IdentityGivesEmpty) {
  ConfusionMatrix m = ConfusionMatrix::zeros({"a", "b"});
  m.at(0, 0) = 5;
  m.at(1, 1) = 3;
  EXPECT_TRUE(top_confusions(m, 10).empty());
  EXPECT_THROW(top_confusions(m, 0), ConfigError);
}

TEST(TopConfusions, SingleCell) {
  ConfusionMatrix m = ConfusionMatrix::zeros({"a", "b"});
  m.at(0, 1) = 2;
  const auto cells = top_confusions(m, 10);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].true_label, "a");
  EXPECT_EQ(cells[0].predicted_label, "b");
  EXPECT_EQ(cells[0].count, 2);
}

TEST(TopConfusions, SortsByCountThenIndex) {
  ConfusionMatrix m = ConfusionMatrix::zeros({"c0", "c1", "c2", "c3", "c4", "c5"});
  m.at(3, 5) = 7;
  m.at(1, 2) = 9;
  m.at(4, 0) = 7;
  const auto cells = top_confusions(m, 2);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].true_label, "c1");
  EXPECT_EQ(cells[0].predicted_label, "c2");
  EXPECT_EQ(cells[0].count, 9);
  EXPECT_EQ(cells[1].true_label, "c3");  // (3,5) precedes (4,0) on tie
  EXPECT_EQ(cells[1].count, 7);
}

AttentionTrace demo_trace() {
  AttentionTrace trace;
  trace.logits = {2.0, -1.0, 0.5};
  trace.predicted_class = 0;
  trace.query_frame_index = 2;
  trace.weights = {0.1, 0.2, 0.4, 0.2, 0.1};
  return trace;
}

TEST(AttentionCsv, ColumnsAndHeader) {
  const std::string csv = attention_trace_csv(demo_trace(), {"up", "down", "left"}, 0.008);
  EXPECT_EQ(csv.find("# predicted=up prob=0."), 0u);
  EXPECT_NE(csv.find("# class_probabilities=up:"), std::string::npos);
  EXPECT_NE(csv.find("frame,time_s,weight,log10_weight\n"), std::string::npos);

  std::istringstream in(csv);
  std::string line;
  int frame = -1;
  double weight_total = 0.0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line[0] == 'f') continue;
    ++frame;
    int f;
    double t, w, lw;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &f, &t, &w, &lw), 4);
    EXPECT_EQ(f, frame);
    EXPECT_NEAR(t, f * 0.008, 1e-9);
    EXPECT_NEAR(lw, std::log10(w), 1e-6);
    weight_total += w;
  }
  EXPECT_EQ(frame, 4);
  EXPECT_NEAR(weight_total, 1.0, 1e-6);
}

TEST(AttentionCsv, ZeroWeightClampsToFloor) {
  AttentionTrace trace = demo_trace();
  trace.weights = {0.0, 1.0, 0.0};
  const std::string csv = attention_trace_csv(trace, {"a", "b", "c"}, 0.008);
  EXPECT_NE(csv.find("0,0.000000,0,-20\n"), std::string::npos);
  EXPECT_NE(csv.find("1,0.008000,1,0\n"), std::string::npos);
}

TEST(AttentionCsv, WeightsMatchTraceRepresentation) {
  AttentionTrace trace = demo_trace();
  trace.weights = {0.12345678901, 0.5, 0.37654321099};
  const std::string csv = attention_trace_csv(trace, {"a", "b", "c"}, 0.008);
  char want[64];
  std::snprintf(want, sizeof(want), ",%.9g,", trace.weights[0]);
  EXPECT_NE(csv.find(want), std::string::npos);
}

TEST(Svg, DeterministicAndShaped) {
  AudioClip clip;
  clip.samples.resize(16000);
  Rng rng(62);
  for (auto& v : clip.samples) v = static_cast<float>(0.4 * std::sin(rng.uniform(0, 6.28)));

  SpectrogramConfig dsp;
  MelSpectrogram<float> mel = log_mel<float>(clip, dsp);
  AttentionTrace trace;
  trace.weights.assign(126, 1.0 / 126.0);
  trace.logits = {1.0, 0.0};
  trace.predicted_class = 0;
  trace.query_frame_index = 63;

  const std::string a = render_attention_svg(clip, mel, trace);
  const std::string b = render_attention_svg(clip, mel, trace);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.find("<svg "), 0u);
  EXPECT_NE(a.find("</svg>"), std::string::npos);
  EXPECT_NE(a.find("polyline"), std::string::npos);
}

TEST(Svg, AllFloorWeightsStayFinite) {
  AudioClip clip;
  clip.samples.assign(16000, 0.0f);
  SpectrogramConfig dsp;
  MelSpectrogram<float> mel = log_mel<float>(clip, dsp);
  AttentionTrace trace;
  trace.weights.assign(126, 0.0);  // degenerate: everything at the floor
  trace.logits = {0.0, 0.0};
  trace.predicted_class = 0;
  trace.query_frame_index = 63;
  const std::string svg = render_attention_svg(clip, mel, trace);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
  EXPECT_EQ(svg.find("inf"), std::string::npos);
}

TEST(Svg, MismatchedFramesThrow) {
  AudioClip clip;
  clip.samples.assign(16000, 0.0f);
  SpectrogramConfig dsp;
  MelSpectrogram<float> mel = log_mel<float>(clip, dsp);
  AttentionTrace trace;
  trace.weights.assign(63, 0.1);
  trace.logits = {0.0, 0.0};
  EXPECT_THROW(render_attention_svg(clip, mel, trace), ShapeError);
}

TEST(Evaluate, RunsOverAManifestSplitAndChecksCompatibility) {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "attkws_eval_test";
  fs::remove_all(root);
  Rng rng(63);
  std::ofstream val_list, test_list;
  {
    fs::create_directories(root);
    val_list.open(root / "validation_list.txt");
    test_list.open(root / "testing_list.txt");
  }
  for (const std::string word : {"left", "right"}) {
    fs::create_directories(root / word);
    for (int i = 0; i < 4; ++i) {
      std::vector<int16_t> samples(16000);
      for (auto& s : samples) s = static_cast<int16_t>(rng.below(4000)) - 2000;
      const std::string name = "s" + std::to_string(i) + "_nohash_0.wav";
      std::ofstream out(root / word / name, std::ios::binary);
      const auto bytes = encode_wav(samples, 16000);
      out.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
      if (i == 2) val_list << word << "/" << name << "\n";
      if (i == 3) test_list << word << "/" << name << "\n";
    }
  }
  val_list.close();
  test_list.close();

  AttRnnConfig cfg;
  cfg.n_mels = 8;
  cfg.conv1 = {3, 3};
  cfg.conv2 = {1, 3};
  cfg.lstm_hidden = 4;
  cfg.query_dim = 8;
  cfg.dense1 = 6;
  cfg.dense2 = 5;
  cfg.n_classes = 3;
  SpectrogramConfig dsp;
  dsp.n_mels = 8;
  dsp.n_dft = 256;
  dsp.hop = 1000;

  Checkpoint ckpt;
  ckpt.model = cfg;
  ckpt.dsp = dsp;
  ckpt.task = "left_right";
  ckpt.params = init_params<float>(cfg, 1);
  ckpt.adam = AdamState<float>::fresh(ckpt.params);

  DatasetManifest manifest =
      build_manifest(root, root / "validation_list.txt", root / "testing_list.txt");
  FeatureLoader loader(manifest, task_spec(TaskName::left_right), dsp, 0, true, 1);
  const EvalReport report = evaluate(ckpt, loader, Split::test, 1);
  EXPECT_EQ(report.n_samples, 2);
  EXPECT_EQ(report.confusion.total(), 2);
  EXPECT_GE(report.overall_accuracy, 0.0);
  EXPECT_LE(report.overall_accuracy, 1.0);

  // Task mismatch fails fast.
  ckpt.task = "cmd20";
  EXPECT_THROW(evaluate(ckpt, loader, Split::test, 1), ConfigError);
  ckpt.task = "left_right";
  ckpt.model.n_classes = 5;
  EXPECT_THROW(evaluate(ckpt, loader, Split::test, 1), ConfigError);

  fs::remove_all(root);
}

}  // namespace
}  // namespace attkws
