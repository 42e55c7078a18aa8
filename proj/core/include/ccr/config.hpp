#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccr/autodiff.hpp"
#include "ccr/contrastive.hpp"
#include "ccr/nets.hpp"
#include "ccr/synth.hpp"
#include "ccr/tasks.hpp"

namespace ccr {

enum class Mode { kBaseline, kSingleTask, kCcrBasic, kProj, kProjSs, kProjSsCts };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);
bool uses_ccr(Mode m);

struct DataConfig {
  std::filesystem::path train_manifest = "data/train.tsv";
  std::filesystem::path test_manifest = "data/test.tsv";
  // Single-task reference scores (`task<TAB>value` lines) for delta_m.
  std::filesystem::path reference = "reference.tsv";
  std::size_t classes = 6;  // foreground classes; segmentation predicts classes + 1
  std::size_t train_samples = 200;
  std::size_t test_samples = 50;
  std::size_t size = 64;
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 4;
  double lr = 2e-4;
  double warmup_epochs = 1.0;
  AdamOptions adam;
  std::uint64_t seed = 0;
  Mode mode = Mode::kProjSsCts;
  std::string single_task;  // task trained alone in single-task mode
};

struct AnalysisConfig {
  std::size_t triplets = 100000;
  std::size_t bins = 64;
  // Epochs of probe-projector training for checkpoints without projectors;
  // 0 measures raw normalized features.
  std::size_t probe_epochs = 10;
  double probe_lr = 1e-3;
};

// Every field has a default, so an empty file is a valid configuration.
// Relative paths are resolved against the directory holding the file.
struct RunConfig {
  DataConfig data;
  std::vector<std::string> tasks = {"seg", "depth", "orient"};
  std::vector<double> task_weights;  // empty = 1.0 each
  nn::NetConfig net;
  CcrConfig ccr;
  TrainConfig train;
  AnalysisConfig analysis;
  std::filesystem::path out = "run";

  // Applies the mode's fixed CCR switches and validates everything.
  void finalize();
  std::vector<TaskSpec> task_specs() const;
  // Tasks actually trained: all of them, or the single-task selection.
  std::vector<TaskSpec> trained_specs() const;
};

// Reads an INI file (`key = value` under `[section]` headers). Unknown
// sections or keys are errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig default_config();
// INI text reproducing `cfg`; paths are written as given.
std::string render_config(const RunConfig& cfg);

TaskSpec task_by_name(const std::string& name, std::size_t seg_classes);

}  // namespace ccr
