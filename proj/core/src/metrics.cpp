#include "ccr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ccr {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double warn_nan(const char* metric) {
  std::cerr << "warning: " << metric << " has no evaluable pixels; reporting NaN\n";
  return kNaN;
}

void check_prediction(const char* who, std::span<const double> prediction, const LabelMap& labels) {
  if (labels.kind() != TaskKind::kContinuous ||
      prediction.size() != labels.channels() * labels.pixels()) {
    throw std::invalid_argument(std::string(who) + ": prediction of " +
                                std::to_string(prediction.size()) +
                                " values does not match the label map");
  }
}

}  // namespace

MiouAccumulator::MiouAccumulator(std::size_t num_classes)
    : k_(num_classes), confusion_(num_classes * num_classes, 0) {}

void MiouAccumulator::add(std::span<const std::int32_t> predicted,
                          std::span<const std::int32_t> labels) {
  if (predicted.size() != labels.size()) {
    throw std::invalid_argument("miou: " + std::to_string(predicted.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == LabelMap::kIgnore) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (y >= k_ || predicted[i] < 0 || p >= k_) {
      throw std::invalid_argument("miou: class id outside [0, " + std::to_string(k_) + ")");
    }
    ++confusion_[y * k_ + p];
    ++evaluated_;
  }
}

double MiouAccumulator::value() const {
  if (evaluated_ == 0) return warn_nan("mIoU");
  double acc = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    std::uint64_t tp = confusion_[c * k_ + c], row = 0, col = 0;
    for (std::size_t j = 0; j < k_; ++j) {
      row += confusion_[c * k_ + j];
      col += confusion_[j * k_ + c];
    }
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    acc += static_cast<double>(tp) / static_cast<double>(uni);
    ++present;
  }
  return acc / static_cast<double>(present);
}

void RmseAccumulator::add(std::span<const double> prediction, const LabelMap& labels) {
  check_prediction("rmse", prediction, labels);
  const std::size_t hw = labels.pixels();
  for (std::size_t i = 0; i < hw; ++i) {
    if (labels.ignored(i)) continue;
    for (std::size_t c = 0; c < labels.channels(); ++c) {
      const double d = prediction[c * hw + i] - labels.value(c, i);
      sum_sq_ += d * d;
    }
    ++count_;
  }
}

double RmseAccumulator::value() const {
  if (count_ == 0) return warn_nan("rmse");
  return std::sqrt(sum_sq_ / static_cast<double>(count_));
}

void MerrAccumulator::add(std::span<const double> prediction, const LabelMap& labels) {
  check_prediction("merr", prediction, labels);
  const std::size_t hw = labels.pixels();
  for (std::size_t i = 0; i < hw; ++i) {
    if (labels.ignored(i)) continue;
    double pp = 0.0, ll = 0.0, pl = 0.0;
    for (std::size_t c = 0; c < labels.channels(); ++c) {
      const double p = prediction[c * hw + i], l = labels.value(c, i);
      pp += p * p;
      ll += l * l;
      pl += p * l;
    }
    const double denom = std::max(std::sqrt(pp), 1e-12) * std::max(std::sqrt(ll), 1e-12);
    const double cos = std::clamp(pl / denom, -1.0, 1.0);
    sum_deg_ += std::acos(cos) * 180.0 / std::numbers::pi;
    ++count_;
  }
}

double MerrAccumulator::value() const {
  if (count_ == 0) return warn_nan("mErr");
  return sum_deg_ / static_cast<double>(count_);
}

double eval_miou(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
                 std::size_t num_classes) {
  MiouAccumulator acc(num_classes);
  acc.add(predicted, labels);
  return acc.value();
}

double eval_rmse(std::span<const double> prediction, const LabelMap& labels) {
  RmseAccumulator acc;
  acc.add(prediction, labels);
  return acc.value();
}

double eval_merr(std::span<const double> prediction, const LabelMap& labels) {
  MerrAccumulator acc;
  acc.add(prediction, labels);
  return acc.value();
}

TaskEvaluator::TaskEvaluator(const TaskSpec& spec)
    : spec_(spec), miou_(spec.kind == TaskKind::kDiscrete ? spec.channels : 1) {}

void TaskEvaluator::add(std::span<const double> prediction, const LabelMap& labels) {
  switch (spec_.eval_metric) {
    case EvalMetric::kMIoU: {
      const std::size_t hw = labels.pixels(), k = spec_.channels;
      if (prediction.size() != k * hw) {
        throw std::invalid_argument("evaluate(" + spec_.name + "): logits do not match labels");
      }
      std::vector<std::int32_t> cls(hw);
      for (std::size_t i = 0; i < hw; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c) {
          if (prediction[c * hw + i] > prediction[best * hw + i]) best = c;
        }
        cls[i] = static_cast<std::int32_t>(best);
      }
      miou_.add(cls, labels.classes());
      break;
    }
    case EvalMetric::kRmse: rmse_.add(prediction, labels); break;
    case EvalMetric::kMErr: merr_.add(prediction, labels); break;
  }
}

double TaskEvaluator::value() const {
  switch (spec_.eval_metric) {
    case EvalMetric::kMIoU: return miou_.value();
    case EvalMetric::kRmse: return rmse_.value();
    case EvalMetric::kMErr: return merr_.value();
  }
  return kNaN;
}

double delta_m(std::span<const double> multi, std::span<const double> single,
               const std::vector<bool>& lower_is_better) {
  if (multi.size() != single.size() || multi.size() != lower_is_better.size() || multi.empty()) {
    throw std::invalid_argument("delta_m: score lists must be non-empty and equally long");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < multi.size(); ++i) {
    if (single[i] == 0.0) {
      throw std::invalid_argument("delta_m: single-task score " + std::to_string(i) + " is zero");
    }
    const double rel = (multi[i] - single[i]) / single[i];
    acc += lower_is_better[i] ? -rel : rel;
  }
  return 100.0 * acc / static_cast<double>(multi.size());
}

double delta_m(std::span<const double> multi, std::span<const double> single,
               std::span<const TaskSpec> specs) {
  std::vector<bool> lower;
  for (const TaskSpec& s : specs) lower.push_back(s.lower_is_better);
  return delta_m(multi, single, lower);
}

}  // namespace ccr
