#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccr/graph.hpp"
#include "ccr/ops.hpp"
#include "ccr/rng.hpp"
#include "ccr/tasks.hpp"
#include "ccr/tensor.hpp"

namespace ccr::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Conv2d {
 public:
  Conv2d() = default;
  // Kaiming-uniform fan-in weights, zero bias.
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng);

  Tensor operator()(Graph& g, const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  Tensor weight;
  Tensor bias;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor operator()(Graph& g, const Tensor& x, bool training);
  void collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;

  Tensor gamma;
  Tensor beta;
  ops::BatchNormBuffers running;
};

// conv3x3 -> BN -> ReLU
struct ConvBlock {
  ConvBlock() = default;
  ConvBlock(std::size_t in_channels, std::size_t out_channels, Rng& rng);
  Tensor operator()(Graph& g, const Tensor& x, bool training);

  Conv2d conv;
  BatchNorm2d bn;
};

// BN(conv1x1(ReLU(conv1x1(F)))), followed by per-pixel L2 normalization.
class Projector {
 public:
  Projector() = default;
  Projector(std::size_t feat_channels, std::size_t proj_channels, Rng& rng);
  Tensor operator()(Graph& g, const Tensor& features, bool training);
  void collect_params(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;

  Conv2d conv1;
  Conv2d conv2;
  BatchNorm2d bn;
};

enum class ProjectorSharing {
  kTsShared,  // one projector per target task, reused for every source
  kTtShared,  // one projector for every target task
  kUnshared,  // one projector per (target, source) pair
  kNone,      // no projector: features are only L2-normalized
};

std::string to_string(ProjectorSharing s);
ProjectorSharing parse_sharing(const std::string& s);

struct NetConfig {
  std::size_t in_channels = 3;
  std::size_t feat_channels = 32;
  std::size_t proj_channels = 32;
  std::size_t encoder_blocks = 3;
  std::size_t decoder_blocks = 2;
  ProjectorSharing sharing = ProjectorSharing::kTsShared;
};

struct TaskOutput {
  Tensor features;    // [B x C_feat x H/2 x W/2], the projection resolution
  Tensor prediction;  // [B x channels x H x W]
};

// Shared encoder (one 2x downsample after the first block), one decoder plus
// 1x1 prediction head per task, and the contrastive projectors.
class MultiTaskNet {
 public:
  MultiTaskNet(NetConfig config, std::vector<TaskSpec> tasks, std::uint64_t seed);

  const NetConfig& config() const { return config_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  std::size_t task_index(const std::string& name) const;

  std::vector<TaskOutput> forward(Graph& g, const Tensor& images, bool training);

  // Unit-normalized projection F' of target-task features for the given
  // source task. Falls back to plain normalization when sharing is kNone or
  // projectors were dropped.
  Tensor project(Graph& g, std::size_t target, std::size_t source, const Tensor& features,
                 bool training);
  // Projector slot used for (target, source), or nullopt without projectors.
  std::optional<std::string> projector_key(std::size_t target, std::size_t source) const;
  bool has_projectors() const { return !projectors_.empty(); }
  std::size_t projector_count() const { return projectors_.size(); }
  void drop_projectors();

  // Trainable tensors in a fixed order; names are stable checkpoint keys.
  std::vector<NamedTensor> parameters() const;
  // BN running statistics.
  std::vector<NamedTensor> buffers() const;

 private:
  NetConfig config_;
  std::vector<TaskSpec> tasks_;
  std::vector<ConvBlock> encoder_;
  std::vector<std::vector<ConvBlock>> decoders_;
  std::vector<Conv2d> heads_;
  std::map<std::string, Projector> projectors_;
};

// Checkpoint file: a text manifest followed by tensor blobs.
//
//   CCRCKPT 1
//   <key> = <value>          architecture + run metadata
//   end
//   <blob>...                parameters, then BN buffers
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> manifest;
  std::vector<NamedTensor> tensors;

  std::optional<std::string> get(const std::string& key) const;
};

void save_checkpoint(const std::filesystem::path& path, const MultiTaskNet& net,
                     const std::vector<std::pair<std::string, std::string>>& extra = {});
Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Rebuilds the network described by the manifest and loads every tensor.
// Projector tensors are optional; if none are present the net has none.
MultiTaskNet load_network(const Checkpoint& ckpt);

}  // namespace ccr::nn
