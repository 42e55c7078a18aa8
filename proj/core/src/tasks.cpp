#include "ccr/tasks.hpp"

#include <cmath>
#include <stdexcept>

#include "ccr/ops.hpp"

namespace ccr {

void TaskSpec::validate() const {
  auto bad = [this](const std::string& why) {
    throw std::invalid_argument("task '" + name + "': " + why);
  };
  if (name.empty()) bad("empty name");
  if (!(loss_weight > 0.0)) bad("loss weight must be positive");
  if (kind == TaskKind::kDiscrete) {
    if (channels < 2) bad("discrete task needs at least 2 classes");
    if (eval_metric != EvalMetric::kMIoU) bad("discrete task must be evaluated with mIoU");
    if (label_metric != LabelMetric::kExactMatch) bad("discrete task needs exact-match labels");
    if (loss != TaskLoss::kCrossEntropy) bad("discrete task needs cross-entropy loss");
  } else {
    if (channels < 1) bad("continuous task needs at least one channel");
    if (eval_metric == EvalMetric::kMIoU) bad("continuous task cannot use mIoU");
    if (label_metric == LabelMetric::kExactMatch) bad("continuous task needs L1 or angular labels");
    if (loss == TaskLoss::kCrossEntropy) bad("continuous task cannot use cross-entropy");
  }
}

TaskSpec segmentation_task(std::string name, std::size_t num_classes) {
  TaskSpec t;
  t.name = std::move(name);
  t.kind = TaskKind::kDiscrete;
  t.channels = num_classes;
  t.label_metric = LabelMetric::kExactMatch;
  t.loss = TaskLoss::kCrossEntropy;
  t.eval_metric = EvalMetric::kMIoU;
  t.lower_is_better = false;
  t.validate();
  return t;
}

TaskSpec depth_task(std::string name) {
  TaskSpec t;
  t.name = std::move(name);
  t.kind = TaskKind::kContinuous;
  t.channels = 1;
  t.label_metric = LabelMetric::kL1;
  t.loss = TaskLoss::kL1;
  t.eval_metric = EvalMetric::kRmse;
  t.lower_is_better = true;
  t.validate();
  return t;
}

TaskSpec orientation_task(std::string name) {
  TaskSpec t;
  t.name = std::move(name);
  t.kind = TaskKind::kContinuous;
  t.channels = 2;
  t.label_metric = LabelMetric::kAngular;
  t.loss = TaskLoss::kCosine;
  t.eval_metric = EvalMetric::kMErr;
  t.lower_is_better = true;
  t.validate();
  return t;
}

std::string to_string(EvalMetric m) {
  switch (m) {
    case EvalMetric::kMIoU: return "miou";
    case EvalMetric::kRmse: return "rmse";
    case EvalMetric::kMErr: return "merr";
  }
  return "?";
}

LabelMap LabelMap::discrete(std::size_t height, std::size_t width, std::vector<std::int32_t> classes) {
  if (classes.size() != height * width) {
    throw std::invalid_argument("label map: " + std::to_string(classes.size()) +
                                " class ids for " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  for (auto c : classes) {
    if (c < 0 && c != kIgnore) throw std::invalid_argument("label map: negative class id " + std::to_string(c));
  }
  LabelMap m;
  m.kind_ = TaskKind::kDiscrete;
  m.height_ = height;
  m.width_ = width;
  m.channels_ = 1;
  m.classes_ = std::move(classes);
  return m;
}

LabelMap LabelMap::continuous(std::size_t channels, std::size_t height, std::size_t width,
                              std::vector<double> values, std::vector<std::uint8_t> valid) {
  if (values.size() != channels * height * width || valid.size() != height * width) {
    throw std::invalid_argument("label map: continuous buffers do not match " +
                                std::to_string(channels) + "x" + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  LabelMap m;
  m.kind_ = TaskKind::kContinuous;
  m.height_ = height;
  m.width_ = width;
  m.channels_ = channels;
  m.values_ = std::move(values);
  m.valid_ = std::move(valid);
  return m;
}

bool LabelMap::ignored(std::size_t pixel) const {
  return kind_ == TaskKind::kDiscrete ? classes_[pixel] == kIgnore : valid_[pixel] == 0;
}

std::size_t LabelMap::valid_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < pixels(); ++i) n += ignored(i) ? 0 : 1;
  return n;
}

LabelMap downsample_labels(const LabelMap& labels, LabelMetric metric) {
  const std::size_t h = labels.height(), w = labels.width();
  if (h % 2 || w % 2) {
    throw std::invalid_argument("downsample_labels: odd extent " + std::to_string(h) + "x" +
                                std::to_string(w));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  if (labels.kind() == TaskKind::kDiscrete) {
    std::vector<std::int32_t> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) out[y * ow + x] = labels.class_at(2 * y * w + 2 * x);
    }
    return LabelMap::discrete(oh, ow, std::move(out));
  }
  const std::size_t c = labels.channels();
  std::vector<double> values(c * oh * ow, 0.0);
  std::vector<std::uint8_t> valid(oh * ow, 0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t taps[4] = {2 * y * w + 2 * x, 2 * y * w + 2 * x + 1,
                                   (2 * y + 1) * w + 2 * x, (2 * y + 1) * w + 2 * x + 1};
      bool ok = true;
      for (auto t : taps) ok = ok && !labels.ignored(t);
      if (!ok) continue;
      const std::size_t o = y * ow + x;
      double norm_sq = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (auto t : taps) acc += labels.value(ch, t);
        values[ch * oh * ow + o] = acc / 4.0;
        norm_sq += (acc / 4.0) * (acc / 4.0);
      }
      if (metric == LabelMetric::kAngular) {
        const double norm = std::sqrt(norm_sq);
        if (norm < 1e-12) continue;
        for (std::size_t ch = 0; ch < c; ++ch) values[ch * oh * ow + o] /= norm;
      }
      valid[o] = 1;
    }
  }
  return LabelMap::continuous(c, oh, ow, std::move(values), std::move(valid));
}

Tensor task_loss(Graph& g, const TaskSpec& spec, const Tensor& prediction,
                 std::span<const LabelMap> labels) {
  if (prediction.rank() != 4 || prediction.dim(0) != labels.size() ||
      prediction.dim(1) != spec.channels) {
    throw std::invalid_argument("task_loss(" + spec.name + "): prediction " +
                                shape_str(prediction.shape()) + " does not match " +
                                std::to_string(labels.size()) + " label maps with " +
                                std::to_string(spec.channels) + " channels");
  }
  const std::size_t h = prediction.dim(2), w = prediction.dim(3), hw = h * w;
  for (const LabelMap& l : labels) {
    if (l.height() != h || l.width() != w) {
      throw std::invalid_argument("task_loss(" + spec.name + "): label size " +
                                  std::to_string(l.height()) + "x" + std::to_string(l.width()) +
                                  " differs from prediction " + shape_str(prediction.shape()));
    }
  }
  if (spec.kind == TaskKind::kDiscrete) {
    std::vector<std::int32_t> flat;
    flat.reserve(labels.size() * hw);
    for (const LabelMap& l : labels) flat.insert(flat.end(), l.classes().begin(), l.classes().end());
    return ops::softmax_cross_entropy(g, prediction, flat);
  }
  const std::size_t c = spec.channels;
  Tensor target(prediction.shape());
  auto t = target.mutable_data();
  std::vector<std::uint8_t> mask;
  mask.reserve(labels.size() * hw);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n].channels() != c) {
      throw std::invalid_argument("task_loss(" + spec.name + "): label has " +
                                  std::to_string(labels[n].channels()) + " channels");
    }
    auto v = labels[n].values();
    std::copy(v.begin(), v.end(), t.begin() + static_cast<std::ptrdiff_t>(n * c * hw));
    mask.insert(mask.end(), labels[n].valid().begin(), labels[n].valid().end());
  }
  if (spec.loss == TaskLoss::kL1) return ops::l1_loss(g, prediction, target, mask);
  return ops::cosine_loss(g, prediction, target, mask);
}

}  // namespace ccr
