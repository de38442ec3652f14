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

// Command-line entry point: manifest, train, eval, infer, attend, params.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "attkws/attention_svg.hpp"
#include "attkws/dataset.hpp"
#include "attkws/evaluation.hpp"
#include "attkws/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string data_dir;
  std::string val_list;
  std::string test_list;
  std::string task = "cmd12";
  std::string checkpoint;
  std::string out_dir = ".";
  std::string config_file;
  std::string wav_path;
  std::string split = "test";
  uint32_t seed = 0;
  int threads = 0;
  int max_epochs = 40;
  int batch_size = 64;
  int patience = 10;
  double lr0 = 0.001;
  bool no_cache = false;
};

attkws::TaskSpec parse_task(const std::string& name) {
  const auto task = attkws::task_from_string(name);
  if (!task) {
    throw attkws::ConfigError("unknown task '" + name +
                              "' (expected cmd12, cmd20, word35 or left_right)");
  }
  return attkws::task_spec(*task);
}

// Optional JSON config file overriding DSP/model hyperparameters.
void apply_config_file(const std::string& path, attkws::SpectrogramConfig& dsp,
                       attkws::AttRnnConfig& model) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw attkws::ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw attkws::ConfigError("config file " + path + ": " + e.what());
  }
  if (j.contains("dsp")) {
    const json& d = j["dsp"];
    dsp.n_dft = d.value("n_dft", dsp.n_dft);
    dsp.hop = d.value("hop", dsp.hop);
    dsp.n_mels = d.value("n_mels", dsp.n_mels);
    dsp.f_min_hz = d.value("f_min_hz", dsp.f_min_hz);
    dsp.f_max_hz = d.value("f_max_hz", dsp.f_max_hz);
    dsp.log_floor = d.value("log_floor", dsp.log_floor);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    model.conv1.filters = m.value("conv1_filters", model.conv1.filters);
    model.conv1.kernel_time = m.value("conv1_kernel_time", model.conv1.kernel_time);
    model.conv2.kernel_time = m.value("conv2_kernel_time", model.conv2.kernel_time);
    model.lstm_hidden = m.value("lstm_hidden", model.lstm_hidden);
    model.query_dim = m.value("query_dim", model.query_dim);
    model.dense1 = m.value("dense1", model.dense1);
    model.dense2 = m.value("dense2", model.dense2);
  }
  model.n_mels = dsp.n_mels;
}

attkws::DatasetManifest open_manifest(const CommonFlags& flags) {
  const fs::path root = flags.data_dir;
  const fs::path val =
      flags.val_list.empty() ? root / "validation_list.txt" : fs::path(flags.val_list);
  const fs::path test =
      flags.test_list.empty() ? root / "testing_list.txt" : fs::path(flags.test_list);
  return attkws::build_manifest(root, val, test);
}

attkws::AudioClip load_input_clip(const std::string& path) {
  attkws::AudioClip clip = attkws::load_wav(path);
  if (clip.sample_rate_hz != attkws::kDatasetSampleRate) {
    throw attkws::UnsupportedFormat("input " + path + " has sample rate " +
                                    std::to_string(clip.sample_rate_hz) + ", expected 16000");
  }
  return attkws::fit_length(clip);
}

std::vector<std::string> labels_for_checkpoint(const attkws::Checkpoint& ckpt) {
  if (const auto task = attkws::task_from_string(ckpt.task)) {
    return attkws::task_spec(*task).target_labels;
  }
  std::vector<std::string> labels;
  for (int i = 0; i < ckpt.model.n_classes; ++i) labels.push_back("class_" + std::to_string(i));
  return labels;
}

int run_manifest(const CommonFlags& flags) {
  const attkws::DatasetManifest manifest = open_manifest(flags);
  fs::create_directories(flags.out_dir);
  const fs::path out = fs::path(flags.out_dir) / "manifest.csv";
  attkws::write_file_atomic(out, attkws::manifest_to_csv(manifest));
  std::printf("%zu entries, %zu noise files -> %s\n", manifest.entries.size(),
              manifest.noise_files.size(), out.string().c_str());
  return 0;
}

int run_train(const CommonFlags& flags) {
  const attkws::TaskSpec task = parse_task(flags.task);
  attkws::SpectrogramConfig dsp;
  attkws::AttRnnConfig model;
  apply_config_file(flags.config_file, dsp, model);
  model.n_classes = task.n_classes();
  model.validate();
  dsp.validate(attkws::kDefaultRawLen);

  attkws::TrainConfig tc;
  tc.seed = flags.seed;
  tc.max_epochs = flags.max_epochs;
  tc.batch_size = flags.batch_size;
  tc.patience = std::min(flags.patience, flags.max_epochs);
  tc.lr0 = flags.lr0;
  tc.threads = flags.threads;

  const attkws::DatasetManifest manifest = open_manifest(flags);
  const bool cache = !flags.no_cache && manifest.entries.size() <= 8000;
  auto loader = std::make_shared<attkws::FeatureLoader>(manifest, task, dsp, flags.seed, cache,
                                                        flags.threads);

  attkws::TrainingData data;
  data.validation = loader->eval_split(attkws::Split::validation);
  data.train_epoch = [loader](int epoch) { return loader->train_epoch(epoch); };

  attkws::TrainHooks hooks;
  hooks.on_epoch = [](const attkws::EpochStats& s) {
    std::printf("epoch %3d  lr %.6g  loss %.4f  val_acc %.4f\n", s.epoch, s.lr, s.train_loss,
                s.val_accuracy);
    std::fflush(stdout);
  };

  const attkws::TrainResult result =
      attkws::train(data, model, dsp, tc, attkws::to_string(task.name), hooks);

  fs::create_directories(flags.out_dir);
  const fs::path ckpt_path = fs::path(flags.out_dir) / "best.ckpt";
  attkws::write_file_atomic(fs::path(flags.out_dir) / "history.csv",
                            attkws::history_to_csv(result.history));
  if (result.has_best()) attkws::save_checkpoint(ckpt_path, result.best);
  if (result.aborted()) {
    // Last good checkpoint and history are on disk; surface the failure.
    throw attkws::NumericError("training aborted at " + result.abort_reason +
                               (result.has_best() ? "; last good checkpoint saved to " +
                                                        ckpt_path.string()
                                                  : "; no completed epoch to save"));
  }
  std::printf("best val_acc %.4f at epoch %d -> %s\n", result.best.best_val_accuracy,
              result.best.epoch, ckpt_path.string().c_str());
  return 0;
}

int run_eval(const CommonFlags& flags) {
  const attkws::TaskSpec task = parse_task(flags.task);
  const auto split = attkws::split_from_string(flags.split);
  if (!split) throw attkws::ConfigError("unknown split '" + flags.split + "'");
  const attkws::Checkpoint ckpt = attkws::load_checkpoint(flags.checkpoint);

  attkws::FeatureLoader loader(open_manifest(flags), task, ckpt.dsp, flags.seed, false,
                               flags.threads);
  const attkws::EvalReport report = attkws::evaluate(ckpt, loader, *split, flags.threads);

  fs::create_directories(flags.out_dir);
  attkws::write_file_atomic(fs::path(flags.out_dir) / "report.json",
                            attkws::report_to_json(report));
  attkws::write_file_atomic(fs::path(flags.out_dir) / "confusion.csv", report.confusion.to_csv());

  std::printf("%s accuracy %.4f over %lld clips\n", flags.split.c_str(),
              report.overall_accuracy, static_cast<long long>(report.n_samples));
  for (const auto& cell : attkws::top_confusions(report.confusion, 5)) {
    std::printf("confused %s -> %s: %lld\n", cell.true_label.c_str(),
                cell.predicted_label.c_str(), static_cast<long long>(cell.count));
  }
  return 0;
}

int run_infer(const CommonFlags& flags) {
  const attkws::Checkpoint ckpt = attkws::load_checkpoint(flags.checkpoint);
  const attkws::AudioClip clip = load_input_clip(flags.wav_path);
  const attkws::AttentionTrace trace = attkws::forward(clip, ckpt.params, ckpt.model, ckpt.dsp);
  const std::vector<std::string> labels = labels_for_checkpoint(ckpt);
  const std::vector<double> probs = attkws::softmax_probs(trace.logits);
  std::printf("predicted: %s\n", labels[static_cast<size_t>(trace.predicted_class)].c_str());
  for (size_t i = 0; i < probs.size(); ++i) {
    std::printf("%s %.6f\n", labels[i].c_str(), probs[i]);
  }
  return 0;
}

int run_attend(const CommonFlags& flags) {
  const attkws::Checkpoint ckpt = attkws::load_checkpoint(flags.checkpoint);
  const attkws::AudioClip clip = load_input_clip(flags.wav_path);
  const attkws::MelSpectrogram<float> mel = attkws::log_mel<float>(clip, ckpt.dsp);
  const attkws::AttentionTrace trace =
      attkws::forward_features(mel.values, ckpt.params, ckpt.model);

  fs::create_directories(flags.out_dir);
  const fs::path csv_path = fs::path(flags.out_dir) / "attention.csv";
  const fs::path svg_path = fs::path(flags.out_dir) / "attention.svg";
  attkws::write_file_atomic(
      csv_path, attkws::attention_trace_csv(trace, labels_for_checkpoint(ckpt),
                                            mel.frame_hop_seconds));
  attkws::render_attention_svg(clip, mel, trace, svg_path);
  std::printf("predicted: %s\n", labels_for_checkpoint(ckpt)[static_cast<size_t>(
                                     trace.predicted_class)].c_str());
  std::printf("wrote %s and %s\n", csv_path.string().c_str(), svg_path.string().c_str());
  return 0;
}

int run_params(const CommonFlags& flags) {
  const attkws::TaskSpec task = parse_task(flags.task);
  attkws::SpectrogramConfig dsp;
  attkws::AttRnnConfig model;
  apply_config_file(flags.config_file, dsp, model);
  model.n_classes = task.n_classes();
  const attkws::ParamCount count = attkws::count_params(model);
  std::printf("%-10s %10s\n", "layer", "params");
  for (const auto& layer : count.layers) {
    std::printf("%-10s %10lld\n", layer.name.c_str(), static_cast<long long>(layer.count));
  }
  std::printf("%-10s %10lld\n", "total", static_cast<long long>(count.total));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attkws: keyword spotting with an attention BiLSTM"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* manifest_cmd = app.add_subcommand("manifest", "dump the dataset manifest as CSV");
  manifest_cmd->add_option("--data", flags.data_dir, "dataset root")->required();
  manifest_cmd->add_option("--val-list", flags.val_list, "validation list file");
  manifest_cmd->add_option("--test-list", flags.test_list, "testing list file");
  manifest_cmd->add_option("--out-dir", flags.out_dir, "output directory");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", flags.data_dir, "dataset root")->required();
  train_cmd->add_option("--task", flags.task, "cmd12|cmd20|word35|left_right");
  train_cmd->add_option("--val-list", flags.val_list, "validation list file");
  train_cmd->add_option("--test-list", flags.test_list, "testing list file");
  train_cmd->add_option("--out-dir", flags.out_dir, "output directory");
  train_cmd->add_option("--seed", flags.seed, "RNG seed");
  train_cmd->add_option("--epochs", flags.max_epochs, "maximum epochs");
  train_cmd->add_option("--batch-size", flags.batch_size, "batch size");
  train_cmd->add_option("--patience", flags.patience, "early-stopping patience");
  train_cmd->add_option("--lr", flags.lr0, "initial learning rate");
  train_cmd->add_option("--threads", flags.threads, "worker threads (0 = auto)");
  train_cmd->add_option("--config", flags.config_file, "JSON hyperparameter overrides");
  train_cmd->add_flag("--no-cache", flags.no_cache, "recompute features every epoch");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_cmd->add_option("--data", flags.data_dir, "dataset root")->required();
  eval_cmd->add_option("--task", flags.task, "task name");
  eval_cmd->add_option("--val-list", flags.val_list, "validation list file");
  eval_cmd->add_option("--test-list", flags.test_list, "testing list file");
  eval_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", flags.split, "train|validation|test");
  eval_cmd->add_option("--out-dir", flags.out_dir, "output directory");
  eval_cmd->add_option("--seed", flags.seed, "RNG seed for split balancing");
  eval_cmd->add_option("--threads", flags.threads, "worker threads");

  auto* infer_cmd = app.add_subcommand("infer", "classify one WAV file");
  infer_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint file")->required();
  infer_cmd->add_option("wav", flags.wav_path, "input WAV")->required();

  auto* attend_cmd = app.add_subcommand("attend", "export attention trace CSV + SVG");
  attend_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint file")->required();
  attend_cmd->add_option("wav", flags.wav_path, "input WAV")->required();
  attend_cmd->add_option("--out-dir", flags.out_dir, "output directory");

  auto* params_cmd = app.add_subcommand("params", "print the trainable parameter table");
  params_cmd->add_option("--task", flags.task, "task name");
  params_cmd->add_option("--config", flags.config_file, "JSON hyperparameter overrides");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  }

  try {
    if (manifest_cmd->parsed()) return run_manifest(flags);
    if (train_cmd->parsed()) return run_train(flags);
    if (eval_cmd->parsed()) return run_eval(flags);
    if (infer_cmd->parsed()) return run_infer(flags);
    if (attend_cmd->parsed()) return run_attend(flags);
    if (params_cmd->parsed()) return run_params(flags);
  } catch (const attkws::NumericError& e) {
    std::cerr << "error: NumericError: " << e.what() << "\n";
    return 3;
  } catch (const attkws::DecodeError& e) {
    std::cerr << "error: DecodeError: " << e.what() << "\n";
    return 2;
  } catch (const attkws::UnsupportedFormat& e) {
    std::cerr << "error: UnsupportedFormat: " << e.what() << "\n";
    return 2;
  } catch (const attkws::ManifestError& e) {
    std::cerr << "error: ManifestError: " << e.what() << "\n";
    return 2;
  } catch (const attkws::CheckpointError& e) {
    std::cerr << "error: CheckpointError: " << e.what() << "\n";
    return 2;
  } catch (const attkws::ConfigError& e) {
    std::cerr << "error: ConfigError: " << e.what() << "\n";
    return 2;
  } catch (const attkws::ShapeError& e) {
    std::cerr << "error: ShapeError: " << e.what() << "\n";
    return 2;
  } catch (const attkws::CliError& e) {
    std::cerr << "error: CliError: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
