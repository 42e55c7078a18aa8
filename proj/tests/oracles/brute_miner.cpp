#include "oracles/brute_miner.hpp"

#include <cmath>
#include <limits>

namespace ccr::oracle {
namespace {

double label_gap(const LabelMap& l, std::size_t i, std::size_t j, LabelMetric metric) {
  if (metric == LabelMetric::kL1) {
    double s = 0;
    for (std::size_t c = 0; c < l.channels(); ++c) s += std::fabs(l.value(c, i) - l.value(c, j));
    return s;
  }
  double dot = 0;
  for (std::size_t c = 0; c < l.channels(); ++c) dot += l.value(c, i) * l.value(c, j);
  if (dot > 1) dot = 1;
  if (dot < -1) dot = -1;
  return std::acos(dot);
}

// Picks `count` entries of `d` among `allowed`, each time the best remaining
// one (smallest when `smallest`, else largest; lowest index on ties).
std::vector<std::size_t> select(const std::vector<double>& d, std::vector<char> allowed, std::size_t count,
                                bool smallest) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < count; ++r) {
    std::size_t best = d.size();
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (!allowed[j]) continue;
      if (best == d.size() || (smallest ? d[j] < d[best] : d[j] > d[best])) best = j;
    }
    if (best == d.size()) break;
    out.push_back(best);
    allowed[best] = 0;
  }
  return out;
}

std::vector<std::size_t> ascending(const std::vector<char>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) out.push_back(j);
  }
  return out;
}

}  // namespace

Partition brute_partition(const LabelMap& labels, std::size_t anchor, std::size_t k, LabelMetric metric) {
  const std::size_t n = labels.pixels();
  Partition p;
  if (labels.ignored(anchor)) return p;
  std::vector<char> cand(n, 0);
  std::size_t avail = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != anchor && !labels.ignored(j)) {
      cand[j] = 1;
      ++avail;
    }
  }
  std::vector<char> pos(n, 0), neg(n, 0);
  if (labels.kind() == TaskKind::kDiscrete) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!cand[j]) continue;
      (labels.class_at(j) == labels.class_at(anchor) ? pos : neg)[j] = 1;
    }
  } else {
    std::size_t per = avail / 2;
    if (k < per) per = k;
    std::vector<double> d(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) d[j] = label_gap(labels, anchor, j, metric);
    for (std::size_t j : select(d, cand, per, true)) pos[j] = 1;
    std::vector<char> rest = cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (pos[j]) rest[j] = 0;
    }
    for (std::size_t j : select(d, rest, per, false)) neg[j] = 1;
  }
  p.positives = ascending(pos);
  p.negatives = ascending(neg);
  p.valid = !p.positives.empty() && !p.negatives.empty();
  return p;
}

TripletBatch brute_mine(const Tensor& projected, std::size_t image, const LabelMap& labels,
                        LabelMetric metric, const std::vector<std::size_t>& anchors, std::size_t k,
                        std::size_t c_neg, DistanceKind distance) {
  const std::size_t c = projected.dim(1), hw = projected.dim(2) * projected.dim(3);
  const double* f = projected.data().data() + image * c * hw;

  std::vector<std::vector<double>> m(hw, std::vector<double>(hw, 0.0));
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      double s = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double diff = f[ch * hw + i] - f[ch * hw + j];
        s += diff * diff;
      }
      m[i][j] = distance == DistanceKind::kSquaredL2 ? s : std::sqrt(s);
    }
  }

  TripletBatch b;
  b.anchors = anchors;
  b.positives.assign(anchors.size(), 0);
  b.negatives.assign(anchors.size(), {});
  b.valid.assign(anchors.size(), 0);
  b.relaxed.assign(anchors.size(), 0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const std::size_t i = anchors[a];
    const Partition p = brute_partition(labels, i, k, metric);
    if (!p.valid) continue;
    b.valid[a] = 1;
    std::vector<char> pmask(hw, 0), nmask(hw, 0), semi(hw, 0);
    for (std::size_t j : p.positives) pmask[j] = 1;
    for (std::size_t j : p.negatives) nmask[j] = 1;
    const std::size_t best = select(m[i], pmask, 1, false).front();
    b.positives[a] = best;
    bool any = false;
    for (std::size_t j = 0; j < hw; ++j) {
      semi[j] = nmask[j] && m[i][j] > m[i][best];
      any = any || semi[j];
    }
    if (any) {
      b.negatives[a] = select(m[i], semi, c_neg, true);
    } else {
      b.negatives[a] = select(m[i], nmask, c_neg, false);
      b.relaxed[a] = 1;
    }
  }
  return b;
}

}  // namespace ccr::oracle
