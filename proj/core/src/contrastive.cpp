#include "ccr/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ccr/ops.hpp"

namespace ccr {
namespace {

struct Scored {
  double d;
  std::size_t idx;
};

bool nearer(const Scored& a, const Scored& b) { return a.d < b.d || (a.d == b.d && a.idx < b.idx); }
bool farther(const Scored& a, const Scored& b) { return a.d > b.d || (a.d == b.d && a.idx < b.idx); }

// First `n` elements of v under `cmp`, sorted.
template <typename Cmp>
void keep_first(std::vector<Scored>& v, std::size_t n, Cmp cmp) {
  n = std::min(n, v.size());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), v.end(), cmp);
  v.resize(n);
}

std::vector<std::size_t> sorted_indices(const std::vector<Scored>& v) {
  std::vector<std::size_t> out;
  out.reserve(v.size());
  for (const Scored& s : v) out.push_back(s.idx);
  std::sort(out.begin(), out.end());
  return out;
}

void check_anchor(const LabelMap& labels, std::size_t anchor) {
  if (anchor >= labels.pixels()) {
    throw std::out_of_range("anchor " + std::to_string(anchor) + " outside a map of " +
                            std::to_string(labels.pixels()) + " pixels");
  }
}

}  // namespace

std::string to_string(DistanceKind d) { return d == DistanceKind::kSquaredL2 ? "squared-l2" : "l2"; }
std::string to_string(Sampling s) { return s == Sampling::kSemiHard ? "semi-hard" : "uniform"; }

DistanceKind parse_distance(const std::string& s) {
  if (s == "squared-l2") return DistanceKind::kSquaredL2;
  if (s == "l2") return DistanceKind::kL2;
  throw std::invalid_argument("unknown distance '" + s + "' (expected squared-l2 or l2)");
}

Sampling parse_sampling(const std::string& s) {
  if (s == "semi-hard") return Sampling::kSemiHard;
  if (s == "uniform") return Sampling::kUniform;
  throw std::invalid_argument("unknown sampling '" + s + "' (expected semi-hard or uniform)");
}

void CcrConfig::validate() const {
  if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) {
    throw std::invalid_argument("ccr: sample_ratio must be in (0, 1], got " + std::to_string(sample_ratio));
  }
  if (!(margin > 0.0)) throw std::invalid_argument("ccr: margin must be > 0");
  if (topk < 1) throw std::invalid_argument("ccr: topk must be >= 1");
  if (c_neg < 1) throw std::invalid_argument("ccr: c_neg must be >= 1");
  if (!(lambda_ctr >= 0.0)) throw std::invalid_argument("ccr: lambda must be >= 0");
  if (!(ramp_epochs >= 0.0)) throw std::invalid_argument("ccr: ramp_epochs must be >= 0");
}

double CcrConfig::effective_lambda(double epoch) const {
  if (ramp_epochs <= 0.0) return lambda_ctr;
  return lambda_ctr * std::min(1.0, std::max(0.0, epoch) / ramp_epochs);
}

double feature_distance(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return kind == DistanceKind::kSquaredL2 ? s : std::sqrt(s);
}

double label_distance(const LabelMap& labels, std::size_t i, std::size_t j, LabelMetric metric) {
  switch (metric) {
    case LabelMetric::kExactMatch:
      return labels.class_at(i) == labels.class_at(j) ? 0.0 : 1.0;
    case LabelMetric::kL1: {
      double s = 0.0;
      for (std::size_t c = 0; c < labels.channels(); ++c) s += std::abs(labels.value(c, i) - labels.value(c, j));
      return s;
    }
    case LabelMetric::kAngular: {
      double dot = 0.0;
      for (std::size_t c = 0; c < labels.channels(); ++c) dot += labels.value(c, i) * labels.value(c, j);
      return std::acos(std::clamp(dot, -1.0, 1.0));
    }
  }
  return 0.0;
}

std::size_t anchor_count(std::size_t candidates, double gamma) {
  if (candidates == 0) return 0;
  // The small slack keeps products like 0.01 * 10000 from flooring to 99.
  const auto n = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(candidates) + 1e-9));
  return std::clamp<std::size_t>(n, 1, candidates);
}

std::vector<std::size_t> sample_anchors(std::span<const std::size_t> candidates, double gamma, Rng& rng) {
  const std::size_t n = anchor_count(candidates.size(), gamma);
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t pos : rng.sample_without_replacement(candidates.size(), n)) out.push_back(candidates[pos]);
  return out;
}

std::vector<std::size_t> sample_anchors(std::size_t h, std::size_t w, double gamma, Rng& rng) {
  return rng.sample_without_replacement(h * w, anchor_count(h * w, gamma));
}

Partition partition_discrete(const LabelMap& labels, std::size_t anchor) {
  check_anchor(labels, anchor);
  if (labels.kind() != TaskKind::kDiscrete) throw std::invalid_argument("partition_discrete: continuous labels");
  Partition p;
  if (labels.ignored(anchor)) return p;
  const std::int32_t cls = labels.class_at(anchor);
  for (std::size_t i = 0; i < labels.pixels(); ++i) {
    if (i == anchor || labels.ignored(i)) continue;
    (labels.class_at(i) == cls ? p.positives : p.negatives).push_back(i);
  }
  p.valid = !p.positives.empty() && !p.negatives.empty();
  return p;
}

Partition partition_continuous(const LabelMap& labels, std::size_t anchor, std::size_t k,
                               LabelMetric metric) {
  check_anchor(labels, anchor);
  if (labels.kind() != TaskKind::kContinuous) throw std::invalid_argument("partition_continuous: discrete labels");
  if (metric == LabelMetric::kExactMatch) throw std::invalid_argument("partition_continuous: exact-match metric");
  Partition p;
  if (labels.ignored(anchor)) return p;
  std::vector<Scored> cand;
  for (std::size_t i = 0; i < labels.pixels(); ++i) {
    if (i == anchor || labels.ignored(i)) continue;
    cand.push_back({label_distance(labels, anchor, i, metric), i});
  }
  const std::size_t per = std::min(k, cand.size() / 2);
  if (per == 0) return p;
  std::sort(cand.begin(), cand.end(), nearer);
  std::vector<Scored> near(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(per));
  // Farthest are taken from what is left so the two sets never overlap.
  std::vector<Scored> rest(cand.begin() + static_cast<std::ptrdiff_t>(per), cand.end());
  keep_first(rest, per, farther);
  p.positives = sorted_indices(near);
  p.negatives = sorted_indices(rest);
  p.valid = true;
  return p;
}

Partition partition(const LabelMap& labels, std::size_t anchor, std::size_t k, LabelMetric metric) {
  return labels.kind() == TaskKind::kDiscrete ? partition_discrete(labels, anchor)
                                              : partition_continuous(labels, anchor, k, metric);
}

std::size_t TripletBatch::triplet_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (valid[i]) n += negatives[i].size();
  }
  return n;
}

std::vector<double> pixel_rows(const Tensor& map, std::size_t image) {
  if (map.rank() != 4 || image >= map.dim(0)) {
    throw std::invalid_argument("pixel_rows: bad map " + shape_str(map.shape()) + " / image " +
                                std::to_string(image));
  }
  const std::size_t c = map.dim(1), hw = map.dim(2) * map.dim(3);
  const double* src = map.data().data() + image * c * hw;
  std::vector<double> rows(hw * c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < hw; ++j) rows[j * c + ch] = src[ch * hw + j];
  }
  return rows;
}

TripletBatch mine_triplets(const Tensor& projected, std::size_t image, const LabelMap& source_labels,
                           LabelMetric metric, const CcrConfig& cfg, Rng& rng) {
  if (projected.rank() != 4 || projected.dim(2) != source_labels.height() ||
      projected.dim(3) != source_labels.width()) {
    throw std::invalid_argument("mine_triplets: features " + shape_str(projected.shape()) +
                                " do not match labels " + std::to_string(source_labels.height()) + "x" +
                                std::to_string(source_labels.width()));
  }
  const std::size_t c = projected.dim(1), hw = source_labels.pixels();
  const std::vector<double> rows = pixel_rows(projected, image);
  auto row = [&](std::size_t j) { return std::span<const double>(rows.data() + j * c, c); };

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < hw; ++i) {
    if (!source_labels.ignored(i)) candidates.push_back(i);
  }
  TripletBatch batch;
  batch.anchors = sample_anchors(candidates, cfg.sample_ratio, rng);
  const std::size_t n = batch.anchors.size();
  batch.positives.assign(n, 0);
  batch.negatives.assign(n, {});
  batch.valid.assign(n, 0);
  batch.relaxed.assign(n, 0);

  std::vector<double> dist(hw);
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t anchor = batch.anchors[a];
    const Partition part = partition(source_labels, anchor, cfg.topk, metric);
    if (!part.valid) continue;
    batch.valid[a] = 1;

    if (cfg.sampling == Sampling::kUniform) {
      batch.positives[a] = part.positives[rng.uniform_index(part.positives.size())];
      const std::size_t take = std::min(cfg.c_neg, part.negatives.size());
      for (std::size_t pos : rng.sample_without_replacement(part.negatives.size(), take)) {
        batch.negatives[a].push_back(part.negatives[pos]);
      }
      continue;
    }

    // Row of the distance matrix M for this anchor.
    for (std::size_t j = 0; j < hw; ++j) dist[j] = feature_distance(row(anchor), row(j), cfg.distance);

    std::size_t best = part.positives.front();
    for (std::size_t j : part.positives) {
      if (dist[j] > dist[best]) best = j;  // ascending scan keeps the lowest index on ties
    }
    batch.positives[a] = best;
    const double d_pos = dist[best];

    std::vector<Scored> semi;
    for (std::size_t j : part.negatives) {
      if (dist[j] > d_pos) semi.push_back({dist[j], j});
    }
    if (!semi.empty()) {
      keep_first(semi, cfg.c_neg, nearer);
    } else {
      for (std::size_t j : part.negatives) semi.push_back({dist[j], j});
      keep_first(semi, cfg.c_neg, farther);
      batch.relaxed[a] = 1;
    }
    for (const Scored& s : semi) batch.negatives[a].push_back(s.idx);
  }
  return batch;
}

Tensor triplet_regularization(Graph& g, const Tensor& projected, std::size_t image,
                              const TripletBatch& batch, double margin, DistanceKind distance) {
  std::vector<std::size_t> ai, pi, ni;
  for (std::size_t a = 0; a < batch.anchors.size(); ++a) {
    if (!batch.valid[a]) continue;
    for (std::size_t neg : batch.negatives[a]) {
      ai.push_back(batch.anchors[a]);
      pi.push_back(batch.positives[a]);
      ni.push_back(neg);
    }
  }
  if (ai.empty()) return Tensor::scalar(0.0);
  const Tensor fa = ops::gather_pixels(g, projected, image, ai);
  Tensor d_ap = ops::squared_l2_rows(g, fa, ops::gather_pixels(g, projected, image, pi));
  Tensor d_an = ops::squared_l2_rows(g, fa, ops::gather_pixels(g, projected, image, ni));
  if (distance == DistanceKind::kL2) {
    d_ap = ops::safe_sqrt(g, d_ap);
    d_an = ops::safe_sqrt(g, d_an);
  }
  return ops::mean(g, ops::hinge(g, ops::sub(g, d_ap, d_an), margin));
}

std::vector<std::size_t> select_task_pairs(std::size_t n_tasks, Rng& rng) {
  if (n_tasks < 2) throw std::invalid_argument("select_task_pairs: need at least 2 tasks");
  std::vector<std::size_t> sources(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const std::size_t r = rng.uniform_index(n_tasks - 1);
    sources[t] = r < t ? r : r + 1;
  }
  return sources;
}

CtrResult ctr_loss(Graph& g, nn::MultiTaskNet& net, const std::vector<Tensor>& features,
                   const std::vector<std::vector<LabelMap>>& labels, const CcrConfig& cfg, Rng& rng,
                   bool training) {
  const std::size_t n = net.tasks().size();
  if (features.size() != n || labels.size() != n) {
    throw std::invalid_argument("ctr_loss: expected features and labels for " + std::to_string(n) + " tasks");
  }
  CtrResult result;
  if (cfg.task_pair_selection) {
    const std::vector<std::size_t> sources = select_task_pairs(n, rng);
    for (std::size_t t = 0; t < n; ++t) result.pairs.emplace_back(t, sources[t]);
  } else {
    if (n < 2) throw std::invalid_argument("ctr_loss: need at least 2 tasks");
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t s = 0; s < n; ++s) {
        if (s != t) result.pairs.emplace_back(t, s);
      }
    }
  }

  // A projector shared across sources is applied once per target.
  std::map<std::pair<std::string, std::size_t>, Tensor> projected;
  Tensor total;
  for (const auto& [t, s] : result.pairs) {
    const std::size_t batch_size = features[t].dim(0);
    if (labels[s].size() != batch_size) {
      throw std::invalid_argument("ctr_loss: task '" + net.tasks()[s].name + "' has " +
                                  std::to_string(labels[s].size()) + " label maps for a batch of " +
                                  std::to_string(batch_size));
    }
    const auto key = std::make_pair(net.projector_key(t, s).value_or(""), t);
    auto it = projected.find(key);
    if (it == projected.end()) it = projected.emplace(key, net.project(g, t, s, features[t], training)).first;
    const Tensor& fp = it->second;

    Rng pair_rng = rng.split(static_cast<std::uint64_t>(t * n + s));
    Tensor pair_sum;
    for (std::size_t b = 0; b < batch_size; ++b) {
      Rng image_rng = pair_rng.split(static_cast<std::uint64_t>(b));
      const TripletBatch tb = mine_triplets(fp, b, labels[s][b], net.tasks()[s].label_metric, cfg, image_rng);
      result.stats.triplets += tb.triplet_count();
      for (std::size_t a = 0; a < tb.anchors.size(); ++a) result.stats.relaxed_anchors += tb.valid[a] && tb.relaxed[a];
      if (tb.empty()) continue;
      Tensor r = triplet_regularization(g, fp, b, tb, cfg.margin, cfg.distance);
      pair_sum = pair_sum.defined() ? ops::add(g, pair_sum, r) : r;
    }
    ++result.stats.pairs;
    if (!pair_sum.defined()) continue;
    Tensor term = ops::scale(g, pair_sum, 1.0 / static_cast<double>(batch_size));
    total = total.defined() ? ops::add(g, total, term) : term;
  }
  result.loss = total.defined() ? total : Tensor::scalar(0.0);
  return result;
}

Blob triplets_to_blob(const std::string& name, const TripletBatch& batch, std::size_t c_neg) {
  const std::size_t cols = 4 + c_neg;
  std::vector<std::int32_t> v(batch.anchors.size() * cols, -1);
  for (std::size_t a = 0; a < batch.anchors.size(); ++a) {
    std::int32_t* r = v.data() + a * cols;
    r[0] = static_cast<std::int32_t>(batch.anchors[a]);
    r[1] = batch.valid[a] ? static_cast<std::int32_t>(batch.positives[a]) : -1;
    r[2] = batch.valid[a];
    r[3] = batch.relaxed[a];
    for (std::size_t k = 0; k < batch.negatives[a].size() && k < c_neg; ++k) {
      r[4 + k] = static_cast<std::int32_t>(batch.negatives[a][k]);
    }
  }
  return make_blob(name, {batch.anchors.size(), cols}, std::move(v));
}

}  // namespace ccr
