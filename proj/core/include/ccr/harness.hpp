#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ccr/config.hpp"
#include "ccr/contrastive.hpp"
#include "ccr/nets.hpp"
#include "ccr/synth.hpp"
#include "ccr/tasks.hpp"

namespace ccr {

// Samples arranged for training: images plus per-task labels at full and at
// projection resolution.
struct PreparedData {
  std::vector<TaskSpec> tasks;
  std::vector<Tensor> images;                 // [3 x H x W] each
  std::vector<std::vector<LabelMap>> labels;  // [task][sample]
  std::vector<std::vector<LabelMap>> low;     // [task][sample], H/2 x W/2

  std::size_t size() const { return images.size(); }
};

PreparedData prepare_data(const std::vector<SceneSample>& samples, const std::vector<TaskSpec>& tasks);
PreparedData load_prepared(const std::filesystem::path& manifest, const std::vector<TaskSpec>& tasks);
// [B x 3 x H x W] stack of the selected images.
Tensor stack_images(const PreparedData& data, std::span<const std::size_t> indices);

// Called once per finished epoch with the mean total loss.
using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

// Minimizes sum_i w_i L_i + lambda(e) L_ctr with Adam, logging each loss
// component per step as `step<TAB>component<TAB>value`.
nn::MultiTaskNet train_network(const RunConfig& cfg, const PreparedData& data, std::ostream* log,
                               const EpochCallback& on_epoch = {});

// Full `train` command: loads data, trains, writes checkpoint.ccrt and
// train.log under `out_dir`.
void run_training(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  const EpochCallback& on_epoch = {});

// Per-task predictions in eval mode, one [C x H x W] tensor per sample.
std::vector<std::vector<Tensor>> predict(nn::MultiTaskNet& net, const PreparedData& data,
                                         std::size_t batch_size);

struct EvalReport {
  std::vector<TaskSpec> tasks;
  std::vector<double> scores;
  std::optional<double> delta_m;
  std::string note;  // why delta_m is missing, if it is

  std::string to_json() const;
};

EvalReport evaluate_network(nn::MultiTaskNet& net, const PreparedData& data, std::size_t batch_size);
// Reference file: one `task<TAB>score` line per task.
std::map<std::string, double> read_reference(const std::filesystem::path& path);
void write_reference(const std::filesystem::path& path, const std::map<std::string, double>& scores);
void attach_delta_m(EvalReport& report, const std::map<std::string, double>& reference);

// Full `eval` command. Builds the network without projectors, writes
// metrics.json under `out_dir`.
EvalReport run_evaluation(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& out_dir);

struct ConsistencyReport {
  std::string target, source;
  std::string feature_space;  // "projector", "probe" or "normalized"
  std::size_t triplets = 0;
  double hist_max = 4.0;
  std::vector<std::size_t> pos_hist, neg_hist;
  double pos_mean = 0, neg_mean = 0, pos_sd = 0, neg_sd = 0;

  double gap() const { return neg_mean - pos_mean; }
  // `#`-prefixed summary lines, then `lo<TAB>hi<TAB>pos<TAB>neg` per bin.
  std::string to_text() const;
};

// Decoder features of task `target` for every sample, eval mode, [1 x C x h x w].
std::vector<Tensor> target_features(nn::MultiTaskNet& net, const PreparedData& data, std::size_t target,
                                    std::size_t batch_size);

// Projector trained on frozen features with the (target, source) triplet loss.
nn::Projector train_probe(const std::vector<Tensor>& features, const std::vector<LabelMap>& source_low,
                          LabelMetric metric, const CcrConfig& ccr, const nn::NetConfig& net_cfg,
                          std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed);

// Uniform analysis triplets (not mined) over the given unit-normalized maps:
// random image, random labelled anchor, uniform positive and negative from
// the source-label partition. Distances are squared L2.
ConsistencyReport measure_consistency(const std::vector<Tensor>& projected,
                                      const std::vector<LabelMap>& source_low, LabelMetric metric,
                                      std::size_t topk, std::size_t n_triplets, std::size_t bins, Rng& rng);

// Full analysis for one pair: projections from the checkpoint's projector
// when present, otherwise from a probe projector trained on the train split
// (probe_epochs > 0) or plain normalization.
ConsistencyReport analyze_consistency(const RunConfig& cfg, const nn::Checkpoint& checkpoint,
                                      const std::string& target, const std::string& source,
                                      std::uint64_t seed);

}  // namespace ccr
