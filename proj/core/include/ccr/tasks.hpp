#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccr/graph.hpp"
#include "ccr/tensor.hpp"

namespace ccr {

enum class TaskKind { kDiscrete, kContinuous };
// How two ground-truth labels are compared when defining positives/negatives.
enum class LabelMetric { kExactMatch, kL1, kAngular };
enum class TaskLoss { kCrossEntropy, kL1, kCosine };
enum class EvalMetric { kMIoU, kRmse, kMErr };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kDiscrete;
  // Class count for discrete tasks, output channels for continuous ones.
  std::size_t channels = 0;
  LabelMetric label_metric = LabelMetric::kExactMatch;
  TaskLoss loss = TaskLoss::kCrossEntropy;
  EvalMetric eval_metric = EvalMetric::kMIoU;
  bool lower_is_better = false;
  double loss_weight = 1.0;

  // Throws std::invalid_argument on an inconsistent combination.
  void validate() const;
};

TaskSpec segmentation_task(std::string name, std::size_t num_classes);
// Scalar regression, L1 loss, rmse evaluation.
TaskSpec depth_task(std::string name);
// Unit 2-vector regression, cosine loss, angular evaluation.
TaskSpec orientation_task(std::string name);

std::string to_string(EvalMetric m);

// Per-pixel ground truth of one task on one image. Discrete maps store class
// ids with kIgnore; continuous maps store channel-major values plus a
// validity mask.
class LabelMap {
 public:
  static constexpr std::int32_t kIgnore = -1;

  static LabelMap discrete(std::size_t height, std::size_t width, std::vector<std::int32_t> classes);
  static LabelMap continuous(std::size_t channels, std::size_t height, std::size_t width,
                             std::vector<double> values, std::vector<std::uint8_t> valid);

  TaskKind kind() const { return kind_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixels() const { return height_ * width_; }
  std::size_t channels() const { return channels_; }

  bool ignored(std::size_t pixel) const;
  std::size_t valid_count() const;

  std::int32_t class_at(std::size_t pixel) const { return classes_[pixel]; }
  double value(std::size_t channel, std::size_t pixel) const {
    return values_[channel * pixels() + pixel];
  }

  std::span<const std::int32_t> classes() const { return classes_; }
  std::span<const double> values() const { return values_; }
  std::span<const std::uint8_t> valid() const { return valid_; }

 private:
  TaskKind kind_ = TaskKind::kDiscrete;
  std::size_t height_ = 0, width_ = 0, channels_ = 1;
  std::vector<std::int32_t> classes_;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
};

// Halves the label resolution: nearest sampling for discrete maps, 2x2 area
// mean for continuous maps (renormalized for angular labels). A continuous
// output pixel whose 2x2 footprint touches an ignored pixel is ignored.
LabelMap downsample_labels(const LabelMap& labels, LabelMetric metric);

// Mean task loss over the non-ignored pixels of a batch. `prediction` is
// [N x C x H x W]; `labels` holds one map per image.
Tensor task_loss(Graph& g, const TaskSpec& spec, const Tensor& prediction,
                 std::span<const LabelMap> labels);

}  // namespace ccr
