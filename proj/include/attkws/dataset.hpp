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

// Speech Commands dataset plumbing: directory layout -> manifest, task label
// maps, and the per-epoch sampling that keeps the catch-all classes balanced.
//
// Class order within a task is lexicographic over the command words with the
// special classes (_unknown_, _silence_, other) last.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "attkws/audio.hpp"
#include "attkws/errors.hpp"
#include "attkws/rng.hpp"

namespace attkws {

inline constexpr const char* kSilenceWord = "_silence_";
inline constexpr const char* kUnknownLabel = "_unknown_";
inline constexpr const char* kSilenceLabel = "_silence_";
inline constexpr const char* kNoiseDir = "_background_noise_";

enum class TaskName { cmd12, cmd20, word35, left_right };

inline std::string to_string(TaskName t) {
  switch (t) {
    case TaskName::cmd12: return "cmd12";
    case TaskName::cmd20: return "cmd20";
    case TaskName::word35: return "word35";
    case TaskName::left_right: return "left_right";
  }
  return "?";
}

inline std::optional<TaskName> task_from_string(const std::string& s) {
  if (s == "cmd12") return TaskName::cmd12;
  if (s == "cmd20") return TaskName::cmd20;
  if (s == "word35") return TaskName::word35;
  if (s == "left_right") return TaskName::left_right;
  return std::nullopt;
}

struct TaskSpec {
  TaskName name;
  std::vector<std::string> target_labels;
  bool has_unknown = false;
  bool has_silence = false;
  // Class receiving out-of-vocabulary words; -1 when such words are skipped.
  int unknown_index = -1;
  // Class receiving silence crops; -1 when the task uses no silence samples.
  int silence_class_index = -1;

  int n_classes() const { return static_cast<int>(target_labels.size()); }
};

namespace dataset_detail {

inline std::vector<std::string> core_commands() {
  return {"yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"};
}

inline std::vector<std::string> digit_words() {
  return {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
}

inline std::vector<std::string> all35_words() {
  std::vector<std::string> words = core_commands();
  for (auto& w : digit_words()) words.push_back(w);
  for (const char* w : {"bed", "bird", "cat", "dog", "happy", "house", "marvin", "sheila",
                        "tree", "wow", "backward", "follow", "forward", "learn", "visual"}) {
    words.emplace_back(w);
  }
  return words;
}

inline std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace dataset_detail

inline TaskSpec task_spec(TaskName name) {
  using namespace dataset_detail;
  TaskSpec t;
  t.name = name;
  switch (name) {
    case TaskName::cmd12:
      t.target_labels = sorted(core_commands());
      t.target_labels.push_back(kUnknownLabel);
      t.target_labels.push_back(kSilenceLabel);
      t.has_unknown = true;
      t.has_silence = true;
      t.unknown_index = 10;
      t.silence_class_index = 11;
      break;
    case TaskName::cmd20: {
      std::vector<std::string> words = core_commands();
      for (auto& w : digit_words()) words.push_back(w);
      t.target_labels = sorted(std::move(words));
      t.target_labels.push_back(kUnknownLabel);
      t.has_unknown = true;
      t.unknown_index = 20;
      break;
    }
    case TaskName::word35:
      t.target_labels = sorted(all35_words());
      t.target_labels.push_back(kUnknownLabel);
      t.has_unknown = true;
      t.unknown_index = 35;
      t.silence_class_index = 35;  // the unknown class holds only silence
      break;
    case TaskName::left_right:
      t.target_labels = {"left", "right", "other"};
      t.has_unknown = true;
      t.unknown_index = 2;
      break;
  }
  return t;
}

// Class index for a raw dataset word under a task; std::nullopt means the
// sample is skipped for this task.
inline std::optional<int> resolve_label(const std::string& raw_word, const TaskSpec& task) {
  if (raw_word == kSilenceWord) {
    if (task.silence_class_index >= 0) return task.silence_class_index;
    return std::nullopt;
  }
  for (int i = 0; i < task.n_classes(); ++i) {
    if (task.target_labels[static_cast<size_t>(i)] == raw_word) return i;
  }
  if (task.has_unknown) return task.unknown_index;
  return std::nullopt;
}

// --------------------------------------------------------------------------
// Manifest

enum class Split { train, validation, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct ManifestEntry {
  std::string path;  // relative to the dataset root, '/' separators
  std::string label;
  Split split;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> noise_files;  // relative paths, silence sources
};

namespace dataset_detail {

inline std::set<std::string> read_list_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("missing list file: " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' ')) {
      line.pop_back();
    }
    if (!line.empty()) out.insert(line);
  }
  return out;
}

}  // namespace dataset_detail

// Walk a Speech Commands style tree (one directory per word plus
// _background_noise_). Files named by the validation/testing lists get those
// splits; every other WAV is training data.
inline DatasetManifest build_manifest(const std::filesystem::path& root,
                                      const std::filesystem::path& validation_list,
                                      const std::filesystem::path& test_list) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ManifestError("dataset root is not a directory: " + root.string());
  const std::set<std::string> val_set = dataset_detail::read_list_file(validation_list);
  const std::set<std::string> test_set = dataset_detail::read_list_file(test_list);

  DatasetManifest manifest;
  manifest.root = root;

  std::vector<std::string> word_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) word_dirs.push_back(e.path().filename().string());
  }
  std::sort(word_dirs.begin(), word_dirs.end());

  for (const std::string& word : word_dirs) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(root / word)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") {
        files.push_back(e.path().filename().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (const std::string& file : files) {
      const std::string rel = word + "/" + file;
      if (word == kNoiseDir) {
        manifest.noise_files.push_back(rel);
        continue;
      }
      const bool in_val = val_set.count(rel) > 0;
      const bool in_test = test_set.count(rel) > 0;
      if (in_val && in_test) {
        throw ManifestError("file listed in both validation and testing lists: " + rel);
      }
      ManifestEntry entry;
      entry.path = rel;
      entry.label = word;
      entry.split = in_val ? Split::validation : in_test ? Split::test : Split::train;
      manifest.entries.push_back(std::move(entry));
    }
  }

  if (manifest.entries.empty()) throw ManifestError("no WAV files under " + root.string());
  int counts[3] = {0, 0, 0};
  for (const auto& e : manifest.entries) ++counts[static_cast<int>(e.split)];
  for (Split s : {Split::train, Split::validation, Split::test}) {
    if (counts[static_cast<int>(s)] == 0) {
      throw ManifestError("empty " + to_string(s) + " split");
    }
  }
  return manifest;
}

inline std::string manifest_to_csv(const DatasetManifest& manifest) {
  std::ostringstream os;
  os << "path,label,split\n";
  for (const auto& e : manifest.entries) {
    os << e.path << "," << e.label << "," << to_string(e.split) << "\n";
  }
  return os.str();
}

// --------------------------------------------------------------------------
// Sample selection

// A concrete trainable/evaluatable item: either a labeled WAV or a one-second
// crop of a background-noise file.
struct SampleRef {
  enum class Kind { wav, noise_crop };
  Kind kind = Kind::wav;
  std::string path;       // relative to the dataset root
  int64_t crop_start = 0;  // noise_crop only
  int label = -1;
};

// Decoded background-noise files, loaded once and cropped many times.
struct NoiseBank {
  std::vector<std::string> paths;
  std::vector<AudioClip> clips;
};

inline NoiseBank load_noise_bank(const DatasetManifest& manifest) {
  NoiseBank bank;
  for (const std::string& rel : manifest.noise_files) {
    AudioClip clip = load_wav(manifest.root / rel);
    if (clip.sample_rate_hz != kDatasetSampleRate) {
      throw UnsupportedFormat("noise file " + rel + " has sample rate " +
                              std::to_string(clip.sample_rate_hz));
    }
    bank.paths.push_back(rel);
    bank.clips.push_back(std::move(clip));
  }
  return bank;
}

namespace dataset_detail {

struct TaskPools {
  std::vector<SampleRef> command;  // words named directly by the task
  std::vector<SampleRef> unknown;  // words that fall into the catch-all class
  int mean_per_class = 0;          // mean command count per command class
};

inline TaskPools collect_pools(const DatasetManifest& manifest, const TaskSpec& task,
                               Split split) {
  TaskPools pools;
  int64_t direct_total = 0;
  std::set<std::string> direct_words(task.target_labels.begin(), task.target_labels.end());
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    const auto label = resolve_label(e.label, task);
    if (!label) continue;
    SampleRef ref;
    ref.kind = SampleRef::Kind::wav;
    ref.path = e.path;
    ref.label = *label;
    if (direct_words.count(e.label) > 0) {
      pools.command.push_back(std::move(ref));
      ++direct_total;
    } else {
      pools.unknown.push_back(std::move(ref));
    }
  }
  int command_classes = task.n_classes();
  if (task.has_unknown) --command_classes;
  if (task.has_silence) --command_classes;
  if (command_classes > 0 && direct_total > 0) {
    pools.mean_per_class = static_cast<int>(
        (direct_total + command_classes / 2) / command_classes);
    if (pools.mean_per_class < 1) pools.mean_per_class = 1;
  }
  return pools;
}

inline constexpr uint32_t kSaltUnknown = 0xA11u;
inline constexpr uint32_t kSaltSilence = 0xB22u;

inline void append_balanced_extras(std::vector<SampleRef>& out, const TaskPools& pools,
                                   const TaskSpec& task, const NoiseBank& noise, uint32_t seed,
                                   uint32_t stream, int raw_len) {
  // Catch-all words: freshly downsampled to the mean command-class count.
  if (!pools.unknown.empty()) {
    std::vector<uint32_t> order(pools.unknown.size());
    for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::for_epoch(seed, stream, kSaltUnknown);
    rng.shuffle(order);
    const size_t take = std::min<size_t>(order.size(),
                                         static_cast<size_t>(std::max(pools.mean_per_class, 1)));
    for (size_t i = 0; i < take; ++i) out.push_back(pools.unknown[order[i]]);
  }
  // Silence: one-second random crops of the noise files.
  if (task.silence_class_index >= 0 && !noise.clips.empty()) {
    Rng rng = Rng::for_epoch(seed, stream, kSaltSilence);
    const int count = std::max(pools.mean_per_class, 1);
    for (int i = 0; i < count; ++i) {
      const uint32_t which = rng.below(static_cast<uint32_t>(noise.clips.size()));
      const int64_t len = static_cast<int64_t>(noise.clips[which].samples.size());
      const int64_t span = std::max<int64_t>(len - raw_len, 0);
      SampleRef ref;
      ref.kind = SampleRef::Kind::noise_crop;
      ref.path = noise.paths[which];
      ref.crop_start = span > 0 ? static_cast<int64_t>(rng.below(static_cast<uint32_t>(span + 1))) : 0;
      ref.label = task.silence_class_index;
      out.push_back(std::move(ref));
    }
  }
}

}  // namespace dataset_detail

// Training pool for one epoch: every command example plus freshly drawn
// unknown/silence examples, rebalanced with the epoch index as seed.
inline std::vector<SampleRef> assemble_train_epoch(const DatasetManifest& manifest,
                                                   const TaskSpec& task, const NoiseBank& noise,
                                                   uint32_t seed, uint32_t epoch,
                                                   int raw_len = kDefaultRawLen) {
  auto pools = dataset_detail::collect_pools(manifest, task, Split::train);
  std::vector<SampleRef> out = pools.command;
  dataset_detail::append_balanced_extras(out, pools, task, noise, seed, epoch, raw_len);
  return out;
}

// Evaluation pool for a split: commands plus unknown/silence balanced the
// same way, drawn once with a split-specific stream so repeated evaluations
// see identical samples.
inline std::vector<SampleRef> assemble_eval_samples(const DatasetManifest& manifest,
                                                    const TaskSpec& task, const NoiseBank& noise,
                                                    Split split, uint32_t seed,
                                                    int raw_len = kDefaultRawLen) {
  auto pools = dataset_detail::collect_pools(manifest, task, split);
  std::vector<SampleRef> out = pools.command;
  const uint32_t stream = 0x5EEDu + static_cast<uint32_t>(split);
  dataset_detail::append_balanced_extras(out, pools, task, noise, seed, stream, raw_len);
  return out;
}

inline AudioClip load_sample(const std::filesystem::path& root, const SampleRef& ref,
                             const NoiseBank& noise, int raw_len = kDefaultRawLen) {
  if (ref.kind == SampleRef::Kind::noise_crop) {
    for (size_t i = 0; i < noise.paths.size(); ++i) {
      if (noise.paths[i] == ref.path) {
        const AudioClip& src = noise.clips[i];
        AudioClip crop;
        crop.sample_rate_hz = src.sample_rate_hz;
        crop.label = kSilenceWord;
        crop.speaker_hash_key = ref.path;
        const int64_t end = std::min<int64_t>(ref.crop_start + raw_len,
                                              static_cast<int64_t>(src.samples.size()));
        crop.samples.assign(src.samples.begin() + ref.crop_start, src.samples.begin() + end);
        return fit_length(crop, raw_len);
      }
    }
    throw ManifestError("noise file not loaded: " + ref.path);
  }
  AudioClip clip = load_wav(root / ref.path);
  if (clip.sample_rate_hz != kDatasetSampleRate) {
    throw UnsupportedFormat("clip " + ref.path + " has sample rate " +
                            std::to_string(clip.sample_rate_hz) + ", expected 16000");
  }
  return fit_length(clip, raw_len);
}

}  // namespace attkws
