#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccr/blob.hpp"
#include "ccr/graph.hpp"
#include "ccr/nets.hpp"
#include "ccr/rng.hpp"
#include "ccr/tasks.hpp"
#include "ccr/tensor.hpp"

namespace ccr {

enum class DistanceKind { kSquaredL2, kL2 };
enum class Sampling {
  kSemiHard,  // hardest positive, closest negatives beyond it
  kUniform,   // one random positive, random negatives
};

std::string to_string(DistanceKind d);
std::string to_string(Sampling s);
DistanceKind parse_distance(const std::string& s);
Sampling parse_sampling(const std::string& s);

struct CcrConfig {
  double margin = 0.2;
  double sample_ratio = 0.01;
  std::size_t topk = 128;
  std::size_t c_neg = 16;
  double lambda_ctr = 1.0;
  double ramp_epochs = 5.0;
  DistanceKind distance = DistanceKind::kSquaredL2;
  Sampling sampling = Sampling::kSemiHard;
  // One random source per target per iteration instead of all N-1.
  bool task_pair_selection = true;
  nn::ProjectorSharing sharing = nn::ProjectorSharing::kTsShared;

  void validate() const;
  // lambda_ctr * min(1, epoch / ramp_epochs); epoch may be fractional.
  double effective_lambda(double epoch) const;
};

// Distance between two feature vectors.
double feature_distance(std::span<const double> a, std::span<const double> b, DistanceKind kind);
// Label-space distance between two pixels of a continuous map: L1 summed over
// channels, or the angle in radians between unit vectors.
double label_distance(const LabelMap& labels, std::size_t i, std::size_t j, LabelMetric metric);

// C_A = max(1, floor(gamma * n)) distinct positions drawn uniformly from
// `candidates`, in draw order.
std::vector<std::size_t> sample_anchors(std::span<const std::size_t> candidates, double gamma,
                                        Rng& rng);
// Over every pixel of an h x w map.
std::vector<std::size_t> sample_anchors(std::size_t h, std::size_t w, double gamma, Rng& rng);
std::size_t anchor_count(std::size_t candidates, double gamma);

struct Partition {
  bool valid = false;
  std::vector<std::size_t> positives;  // ascending pixel index
  std::vector<std::size_t> negatives;  // ascending pixel index
};

// Same-label pixels are positives, other labelled pixels negatives.
Partition partition_discrete(const LabelMap& labels, std::size_t anchor);
// The k nearest / k farthest labelled pixels in label space, ties to the
// lower index. With fewer than 2k candidates each side gets
// min(k, candidates / 2).
Partition partition_continuous(const LabelMap& labels, std::size_t anchor, std::size_t k,
                               LabelMetric metric);
Partition partition(const LabelMap& labels, std::size_t anchor, std::size_t k, LabelMetric metric);

// Mined triplets for one (target, source) pair on one image.
struct TripletBatch {
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> positives;               // one per anchor
  std::vector<std::vector<std::size_t>> negatives;  // up to C_neg per anchor
  std::vector<std::uint8_t> valid;
  // Semi-hard condition could not be met; negatives are the farthest ones.
  std::vector<std::uint8_t> relaxed;

  std::size_t triplet_count() const;
  bool empty() const { return triplet_count() == 0; }
};

// Pixel-major copy [hw x C] of image `image` of a [B x C x h x w] map.
std::vector<double> pixel_rows(const Tensor& map, std::size_t image);

// Mines triplets on a detached copy of `projected` (image `image`) using the
// source-task labels at the same resolution.
TripletBatch mine_triplets(const Tensor& projected, std::size_t image, const LabelMap& source_labels,
                           LabelMetric metric, const CcrConfig& cfg, Rng& rng);

// Mean hinge [D(a, a+) - D(a, a-) + m]_+ over every emitted triplet. Returns
// an exact 0 without graph edges for an empty batch.
Tensor triplet_regularization(Graph& g, const Tensor& projected, std::size_t image,
                              const TripletBatch& batch, double margin, DistanceKind distance);

// sources[t] != t, uniform over the other n - 1 tasks.
std::vector<std::size_t> select_task_pairs(std::size_t n_tasks, Rng& rng);

struct CtrStats {
  std::size_t pairs = 0;
  std::size_t triplets = 0;
  std::size_t relaxed_anchors = 0;
};

struct CtrResult {
  Tensor loss;
  CtrStats stats;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (target, source)
};

// Sum over the selected (target, source) pairs of the batch-averaged
// regularization. `features[t]` is [B x C x h x w]; `labels[t][b]` holds task
// t's labels for image b at h x w.
CtrResult ctr_loss(Graph& g, nn::MultiTaskNet& net, const std::vector<Tensor>& features,
                   const std::vector<std::vector<LabelMap>>& labels, const CcrConfig& cfg, Rng& rng,
                   bool training = true);

// i32 [C_A x (4 + C_neg)] rows: anchor, positive, valid, relaxed, negatives
// padded with -1.
Blob triplets_to_blob(const std::string& name, const TripletBatch& batch, std::size_t c_neg);

}  // namespace ccr
