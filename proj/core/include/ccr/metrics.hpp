#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccr/tasks.hpp"

namespace ccr {

// Confusion-matrix mIoU. Classes whose union of prediction and label is
// empty are skipped rather than scored as 1.
class MiouAccumulator {
 public:
  explicit MiouAccumulator(std::size_t num_classes);
  void add(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels);
  // NaN when no pixel was evaluable.
  double value() const;
  std::size_t evaluated() const { return evaluated_; }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> confusion_;
  std::size_t evaluated_ = 0;
};

class RmseAccumulator {
 public:
  // prediction is channel-major [C x HW] for one image.
  void add(std::span<const double> prediction, const LabelMap& labels);
  double value() const;
  std::size_t evaluated() const { return count_; }

 private:
  double sum_sq_ = 0.0;
  std::size_t count_ = 0;
};

// Mean angle in degrees between normalized prediction and label vectors.
class MerrAccumulator {
 public:
  void add(std::span<const double> prediction, const LabelMap& labels);
  double value() const;
  std::size_t evaluated() const { return count_; }

 private:
  double sum_deg_ = 0.0;
  std::size_t count_ = 0;
};

double eval_miou(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
                 std::size_t num_classes);
double eval_rmse(std::span<const double> prediction, const LabelMap& labels);
double eval_merr(std::span<const double> prediction, const LabelMap& labels);

// Dispatches one image's prediction ([C x HW], channel-major) to the
// accumulator matching the task's metric.
class TaskEvaluator {
 public:
  explicit TaskEvaluator(const TaskSpec& spec);
  void add(std::span<const double> prediction, const LabelMap& labels);
  double value() const;
  const TaskSpec& spec() const { return spec_; }

 private:
  TaskSpec spec_;
  MiouAccumulator miou_;
  RmseAccumulator rmse_;
  MerrAccumulator merr_;
};

// Signed mean relative change versus single-task references, in percent:
// (100/N) * sum_i (-1)^{lower_i} (multi_i - single_i) / single_i.
double delta_m(std::span<const double> multi, std::span<const double> single,
               const std::vector<bool>& lower_is_better);
double delta_m(std::span<const double> multi, std::span<const double> single,
               std::span<const TaskSpec> specs);

}  // namespace ccr
