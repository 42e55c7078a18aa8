#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "ccr/autodiff.hpp"
#include "ccr/contrastive.hpp"
#include "ccr/ops.hpp"
#include "oracles/brute_miner.hpp"
#include "oracles/fixtures.hpp"

namespace ccr {
namespace {

using fixture::random_unit_map;

CcrConfig mining_cfg(double gamma, std::size_t k, std::size_t c_neg) {
  CcrConfig c;
  c.sample_ratio = gamma;
  c.topk = k;
  c.c_neg = c_neg;
  return c;
}

// Unit vectors in the plane at the given angles, one pixel each: [1 x 2 x 1 x n].
Tensor ring(const std::vector<double>& degrees) {
  const std::size_t n = degrees.size();
  std::vector<double> v(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::cos(degrees[i] * std::numbers::pi / 180.0);
    v[n + i] = std::sin(degrees[i] * std::numbers::pi / 180.0);
  }
  return Tensor({1, 2, 1, n}, std::move(v));
}

void expect_same(const TripletBatch& a, const TripletBatch& b) {
  ASSERT_EQ(a.anchors, b.anchors);
  EXPECT_EQ(a.valid, b.valid);
  EXPECT_EQ(a.relaxed, b.relaxed);
  for (std::size_t i = 0; i < a.anchors.size(); ++i) {
    if (!a.valid[i]) continue;
    EXPECT_EQ(a.positives[i], b.positives[i]) << "anchor " << a.anchors[i];
    EXPECT_EQ(a.negatives[i], b.negatives[i]) << "anchor " << a.anchors[i];
  }
}

TEST(CcrConfig, PaperDefaults) {
  CcrConfig c;
  EXPECT_EQ(c.margin, 0.2);
  EXPECT_EQ(c.sample_ratio, 0.01);
  EXPECT_EQ(c.topk, 128u);
  EXPECT_EQ(c.lambda_ctr, 1.0);
  EXPECT_EQ(c.c_neg, 16u);
  EXPECT_NO_THROW(c.validate());
}

TEST(CcrConfig, Validation) {
  auto bad = [](auto mutate) {
    CcrConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), std::invalid_argument);
  };
  bad([](CcrConfig& c) { c.sample_ratio = 0; });
  bad([](CcrConfig& c) { c.sample_ratio = 1.5; });
  bad([](CcrConfig& c) { c.margin = 0; });
  bad([](CcrConfig& c) { c.topk = 0; });
  bad([](CcrConfig& c) { c.c_neg = 0; });
}

TEST(CcrConfig, LinearRamp) {
  CcrConfig c;
  c.lambda_ctr = 2.0;
  EXPECT_EQ(c.effective_lambda(0.0), 0.0);
  EXPECT_EQ(c.effective_lambda(2.5), 1.0);
  EXPECT_EQ(c.effective_lambda(5.0), 2.0);
  EXPECT_EQ(c.effective_lambda(40.0), 2.0);
}

TEST(SampleAnchors, Counts) {
  Rng rng(1);
  EXPECT_EQ(sample_anchors(100, 100, 0.01, rng).size(), 100u);
  auto all = sample_anchors(4, 4, 1.0, rng);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 16u);
  EXPECT_EQ(sample_anchors(3, 3, 0.01, rng).size(), 1u);  // never fewer than one
  EXPECT_EQ(anchor_count(0, 0.5), 0u);
  EXPECT_EQ(anchor_count(10, 0.25), 2u);  // floored
}

TEST(SampleAnchors, DistinctAndSeeded) {
  Rng a(42), b(42);
  auto x = sample_anchors(32, 32, 0.05, a);
  auto y = sample_anchors(32, 32, 0.05, b);
  EXPECT_EQ(x, y);
  EXPECT_EQ(std::set<std::size_t>(x.begin(), x.end()).size(), x.size());
  for (auto i : x) EXPECT_LT(i, 1024u);
}

TEST(SampleAnchors, RoughlyUniform) {
  Rng rng(3);
  std::vector<int> hits(16, 0);
  for (int r = 0; r < 16000; ++r) {
    for (auto i : sample_anchors(4, 4, 0.25, rng)) ++hits[i];
  }
  // 4 draws per round: expected 4000 per pixel, sd ~ 55.
  for (int h : hits) EXPECT_NEAR(h, 4000, 300);
}

TEST(SampleAnchors, FromCandidatesOnly) {
  Rng rng(4);
  const std::vector<std::size_t> cand{3, 9, 11};
  auto got = sample_anchors(cand, 1.0, rng);
  EXPECT_EQ(std::set<std::size_t>(got.begin(), got.end()), std::set<std::size_t>(cand.begin(), cand.end()));
}

TEST(PartitionDiscrete, Enumeration) {
  auto l = LabelMap::discrete(2, 2, {1, 1, 2, LabelMap::kIgnore});
  Partition p = partition_discrete(l, 0);
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.positives, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p.negatives, (std::vector<std::size_t>{2}));
}

TEST(PartitionDiscrete, DegenerateCases) {
  EXPECT_FALSE(partition_discrete(LabelMap::discrete(2, 2, {3, 3, 3, 3}), 1).valid);
  EXPECT_FALSE(partition_discrete(LabelMap::discrete(1, 3, {LabelMap::kIgnore, 1, 2}), 0).valid);
}

TEST(PartitionContinuous, DepthOrdering) {
  auto l = LabelMap::continuous(1, 1, 4, {0.0, 0.1, 0.5, 1.0}, {1, 1, 1, 1});
  Partition p = partition_continuous(l, 0, 1, LabelMetric::kL1);
  EXPECT_EQ(p.positives, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p.negatives, (std::vector<std::size_t>{3}));
}

TEST(PartitionContinuous, AngularOrdering) {
  auto l = LabelMap::continuous(2, 1, 3, {1, 1, -1, 0, 0, 0}, {1, 1, 1});
  Partition p = partition_continuous(l, 0, 1, LabelMetric::kAngular);
  EXPECT_EQ(p.positives, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p.negatives, (std::vector<std::size_t>{2}));
}

TEST(PartitionContinuous, ScarceCandidatesNeverOverlap) {
  // Anchor plus 3 candidates with k=5: each side gets 3/2 = 1.
  auto l = LabelMap::continuous(1, 1, 5, {0.5, 0.5, 0.5, 0.5, 0.9}, {1, 1, 1, 1, 0});
  Partition p = partition_continuous(l, 0, 5, LabelMetric::kL1);
  ASSERT_TRUE(p.valid);
  EXPECT_EQ(p.positives, (std::vector<std::size_t>{1}));  // all tied: lowest index first
  EXPECT_EQ(p.negatives, (std::vector<std::size_t>{2}));
  auto lone = LabelMap::continuous(1, 1, 2, {0.1, 0.2}, {1, 1});
  EXPECT_FALSE(partition_continuous(lone, 0, 3, LabelMetric::kL1).valid);
}

TEST(PartitionContinuous, IgnoredAnchorIsInvalid) {
  auto l = LabelMap::continuous(1, 1, 4, {0.1, 0.2, 0.3, 0.4}, {0, 1, 1, 1});
  EXPECT_FALSE(partition_continuous(l, 0, 1, LabelMetric::kL1).valid);
}

TEST(Partition, MatchesBruteForceOnRandomMaps) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    auto d = fixture::random_discrete(8, 8, 3, 0.1, rng);
    auto s = fixture::random_scalar(8, 8, 0.1, rng);
    auto v = fixture::random_unit_vectors(8, 8, 0.1, rng);
    for (std::size_t a = 0; a < 64; ++a) {
      auto check = [&](const LabelMap& l, LabelMetric m) {
        Partition fast = partition(l, a, 5, m), ref = oracle::brute_partition(l, a, 5, m);
        ASSERT_EQ(fast.valid, ref.valid);
        if (!fast.valid) return;
        EXPECT_EQ(fast.positives, ref.positives);
        EXPECT_EQ(fast.negatives, ref.negatives);
      };
      check(d, LabelMetric::kExactMatch);
      check(s, LabelMetric::kL1);
      check(v, LabelMetric::kAngular);
    }
  }
}

TEST(MineTriplets, ForcedToyTriplet) {
  // Pixel 0 anchor, pixel 1 same class at 30 degrees, pixel 2 other class at 90.
  Tensor f = ring({0, 30, 90});
  auto l = LabelMap::discrete(1, 3, {1, 1, 2, });
  Rng rng(1);
  CcrConfig cfg = mining_cfg(1.0, 1, 4);
  TripletBatch b = mine_triplets(f, 0, l, LabelMetric::kExactMatch, cfg, rng);
  const auto it = std::find(b.anchors.begin(), b.anchors.end(), 0u);
  ASSERT_NE(it, b.anchors.end());
  const std::size_t a = static_cast<std::size_t>(it - b.anchors.begin());
  ASSERT_TRUE(b.valid[a]);
  EXPECT_EQ(b.positives[a], 1u);
  EXPECT_EQ(b.negatives[a], (std::vector<std::size_t>{2}));
  EXPECT_FALSE(b.relaxed[a]);
}

TEST(MineTriplets, RelaxedFallbackTakesFarthestNegatives) {
  // Same-class pixel at 180 degrees: nothing of the other class is farther.
  Tensor f = ring({0, 180, 10, 40, 20});
  auto l = LabelMap::discrete(1, 5, {1, 1, 2, 2, 2});
  CcrConfig cfg = mining_cfg(1.0, 1, 2);
  Rng rng(2);
  TripletBatch b = mine_triplets(f, 0, l, LabelMetric::kExactMatch, cfg, rng);
  const std::size_t a = static_cast<std::size_t>(std::find(b.anchors.begin(), b.anchors.end(), 0u) - b.anchors.begin());
  ASSERT_TRUE(b.valid[a]);
  EXPECT_TRUE(b.relaxed[a]);
  EXPECT_EQ(b.negatives[a], (std::vector<std::size_t>{3, 4}));
}

TEST(MineTriplets, DropsAnchorsWithoutNegatives) {
  Rng rng(3);
  Tensor f = random_unit_map(1, 4, 3, 3, rng);
  auto l = LabelMap::discrete(3, 3, std::vector<std::int32_t>(9, 2));
  TripletBatch b = mine_triplets(f, 0, l, LabelMetric::kExactMatch, mining_cfg(1.0, 1, 4), rng);
  EXPECT_EQ(b.anchors.size(), 9u);
  EXPECT_TRUE(b.empty());
  Graph g;
  Tensor r = triplet_regularization(g, f, 0, b, 0.2, DistanceKind::kSquaredL2);
  EXPECT_EQ(r.item(), 0.0);
  EXPECT_EQ(g.size(), 0u);
}

TEST(MineTriplets, SkipsIgnoredAnchors) {
  Rng rng(4);
  Tensor f = random_unit_map(1, 4, 4, 4, rng);
  std::vector<std::int32_t> cls(16, LabelMap::kIgnore);
  cls[0] = cls[5] = 1;
  cls[10] = 2;
  TripletBatch b = mine_triplets(f, 0, LabelMap::discrete(4, 4, cls), LabelMetric::kExactMatch,
                                 mining_cfg(1.0, 1, 4), rng);
  EXPECT_EQ(std::set<std::size_t>(b.anchors.begin(), b.anchors.end()), (std::set<std::size_t>{0, 5, 10}));
}

class OracleEquivalence : public ::testing::TestWithParam<LabelMetric> {};

TEST_P(OracleEquivalence, HundredRandomInstances) {
  const LabelMetric metric = GetParam();
  Rng rng(1000 + static_cast<int>(metric));
  for (int trial = 0; trial < 100; ++trial) {
    Tensor f = random_unit_map(2, 5, 8, 8, rng);
    LabelMap l = metric == LabelMetric::kExactMatch ? fixture::random_discrete(8, 8, 3, 0.1, rng)
                 : metric == LabelMetric::kL1       ? fixture::random_scalar(8, 8, 0.1, rng)
                                                    : fixture::random_unit_vectors(8, 8, 0.1, rng);
    CcrConfig cfg = mining_cfg(0.25, 6, 4);
    const std::size_t image = static_cast<std::size_t>(trial % 2);
    Rng mine_rng = rng.split(static_cast<std::uint64_t>(trial));
    TripletBatch fast = mine_triplets(f, image, l, metric, cfg, mine_rng);
    TripletBatch ref = oracle::brute_mine(f, image, l, metric, fast.anchors, cfg.topk, cfg.c_neg, cfg.distance);
    expect_same(fast, ref);

    // Structural invariants.
    const auto rows = pixel_rows(f, image);
    auto dist = [&](std::size_t i, std::size_t j) {
      return feature_distance({rows.data() + i * 5, 5}, {rows.data() + j * 5, 5}, DistanceKind::kSquaredL2);
    };
    for (std::size_t a = 0; a < fast.anchors.size(); ++a) {
      if (!fast.valid[a]) continue;
      const std::size_t an = fast.anchors[a];
      EXPECT_NE(fast.positives[a], an);
      EXPECT_LE(fast.negatives[a].size(), cfg.c_neg);
      for (std::size_t n : fast.negatives[a]) {
        EXPECT_LT(n, 64u);
        EXPECT_NE(n, an);
        if (!fast.relaxed[a]) {
          EXPECT_GT(dist(an, n), dist(an, fast.positives[a]));
        }
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllMetrics, OracleEquivalence,
                         ::testing::Values(LabelMetric::kExactMatch, LabelMetric::kL1, LabelMetric::kAngular));

TEST(MineTriplets, PerImageIndependence) {
  Rng rng(5);
  Tensor batch = random_unit_map(2, 4, 6, 6, rng);
  auto l = fixture::random_discrete(6, 6, 3, 0.0, rng);
  CcrConfig cfg = mining_cfg(0.3, 4, 3);
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor single({1, 4, 6, 6}, std::vector<double>(batch.data().begin() + b * 144, batch.data().begin() + (b + 1) * 144));
    Rng r1(9), r2(9);
    expect_same(mine_triplets(batch, b, l, LabelMetric::kExactMatch, cfg, r1),
                mine_triplets(single, 0, l, LabelMetric::kExactMatch, cfg, r2));
  }
}

TEST(MineTriplets, UniformSamplingStaysInsidePartition) {
  Rng rng(6);
  Tensor f = random_unit_map(1, 4, 8, 8, rng);
  auto l = fixture::random_discrete(8, 8, 3, 0.1, rng);
  CcrConfig cfg = mining_cfg(0.5, 4, 5);
  cfg.sampling = Sampling::kUniform;
  TripletBatch b = mine_triplets(f, 0, l, LabelMetric::kExactMatch, cfg, rng);
  for (std::size_t a = 0; a < b.anchors.size(); ++a) {
    if (!b.valid[a]) continue;
    Partition p = partition(l, b.anchors[a], cfg.topk, LabelMetric::kExactMatch);
    EXPECT_TRUE(std::binary_search(p.positives.begin(), p.positives.end(), b.positives[a]));
    std::set<std::size_t> uniq(b.negatives[a].begin(), b.negatives[a].end());
    EXPECT_EQ(uniq.size(), b.negatives[a].size());
    for (auto n : b.negatives[a]) EXPECT_TRUE(std::binary_search(p.negatives.begin(), p.negatives.end(), n));
  }
}

// Map whose pixel i sits at angle deg[i]; squared chord length is 2 - 2cos.
double chord2(double deg) { return 2.0 - 2.0 * std::cos(deg * std::numbers::pi / 180.0); }

TEST(TripletRegularization, EqualDistancesGiveMargin) {
  // Positive and negatives all 60 degrees from the anchor.
  Tensor f = ring({0, 60, -60, 60});
  TripletBatch b{{0}, {1}, {{2, 3}}, {1}, {0}};
  Graph g;
  EXPECT_NEAR(triplet_regularization(g, f, 0, b, 0.2, DistanceKind::kSquaredL2).item(), 0.2, 1e-15);
}

TEST(TripletRegularization, SatisfiedMarginsGiveZero) {
  Tensor f = ring({0, 0, 90, 180});
  TripletBatch b{{0}, {1}, {{2, 3}}, {1}, {0}};
  Graph g;
  EXPECT_EQ(triplet_regularization(g, f, 0, b, 0.2, DistanceKind::kSquaredL2).item(), 0.0);
}

TEST(TripletRegularization, HandComputedFourTriplets) {
  // Anchor pixels 0 and 3; squared distances placed on a 1-D line inside a
  // 1-channel map so that D = (x_i - x_j)^2 exactly:
  //   anchor 0 at 0: positive at sqrt(0.1), negatives at sqrt(0.2), -sqrt(0.4)
  //   anchor 3 at 10: positive at 10 + sqrt(0.3), negatives 10 - sqrt(0.35), 10 - sqrt(0.9)
  const double v[] = {0, std::sqrt(0.1), std::sqrt(0.2), 10, -std::sqrt(0.4), 10 + std::sqrt(0.3),
                      10 - std::sqrt(0.35), 10 - std::sqrt(0.9)};
  Tensor f({1, 1, 1, 8}, std::vector<double>(std::begin(v), std::end(v)));
  TripletBatch b{{0, 3}, {1, 5}, {{2, 4}, {6, 7}}, {1, 1}, {0, 0}};
  Graph g;
  const double r = triplet_regularization(g, f, 0, b, 0.2, DistanceKind::kSquaredL2).item();
  EXPECT_NEAR(r, 0.0625, 1e-14);
}

TEST(TripletRegularization, BoundedByMarginPlusFour) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    Tensor f = random_unit_map(1, 3, 4, 4, rng);
    auto l = fixture::random_discrete(4, 4, 2, 0.0, rng);
    TripletBatch b = mine_triplets(f, 0, l, LabelMetric::kExactMatch, mining_cfg(1.0, 1, 4), rng);
    Graph g;
    const double r = triplet_regularization(g, f, 0, b, 0.2, DistanceKind::kSquaredL2).item();
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 4.2);
  }
}

TEST(TripletRegularization, PlainL2Option) {
  Tensor f = ring({0, 90, 180});
  TripletBatch b{{0}, {1}, {{2}}, {1}, {0}};
  Graph g;
  EXPECT_NEAR(triplet_regularization(g, f, 0, b, 0.2, DistanceKind::kL2).item(),
              std::sqrt(chord2(90)) - 2.0 + 0.2 > 0 ? std::sqrt(chord2(90)) - 2.0 + 0.2 : 0.0, 1e-12);
  EXPECT_NEAR(triplet_regularization(g, f, 0, b, 0.2, DistanceKind::kSquaredL2).item(), 0.0, 1e-15);
  TripletBatch near{{0}, {2}, {{1}}, {1}, {0}};
  EXPECT_NEAR(triplet_regularization(g, f, 0, near, 0.2, DistanceKind::kL2).item(),
              2.0 - std::sqrt(2.0) + 0.2, 1e-12);
}

TEST(TripletRegularization, GradientOnlyAtGatheredPixels) {
  Rng rng(9);
  Tensor f = random_unit_map(1, 3, 4, 4, rng);
  f.set_requires_grad(true);
  TripletBatch b{{0}, {5}, {{6, 9}}, {1}, {0}};
  // Force an active hinge with a large margin.
  Graph g;
  Tensor r = triplet_regularization(g, f, 0, b, 10.0, DistanceKind::kSquaredL2);
  g.backward(r);
  const std::set<std::size_t> used{0, 5, 6, 9};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < 16; ++p) {
      const double gr = f.grad()[c * 16 + p];
      if (!used.count(p)) {
        EXPECT_EQ(gr, 0.0) << "pixel " << p;
      }
    }
  }
}

TEST(TripletRegularization, ComposedPipelineGradcheck) {
  // Projector -> mining on the base point (held fixed) -> gather -> loss, on
  // a random 4x4x4 feature map.
  Rng rng(10);
  Tensor feats = fixture::random_tensor({2, 4, 4, 4}, rng);
  Rng init(11);
  nn::Projector proj(4, 4, init);
  auto labels = fixture::random_discrete(4, 4, 3, 0.0, rng);
  CcrConfig cfg = mining_cfg(0.5, 1, 3);
  TripletBatch fixed;
  {
    Graph g(Graph::Mode::kNoGrad);
    Tensor y = proj(g, feats, true);
    Rng mr(12);
    fixed = mine_triplets(y, 0, labels, LabelMetric::kExactMatch, cfg, mr);
  }
  ASSERT_FALSE(fixed.empty());
  auto fn = [&](Graph& g) { return triplet_regularization(g, proj(g, feats, true), 0, fixed, 1.0, cfg.distance); };
  const double err = gradcheck_params(fn, {feats, proj.conv1.weight, proj.conv1.bias, proj.conv2.weight,
                                           proj.conv2.bias, proj.bn.gamma, proj.bn.beta});
  EXPECT_LT(err, 1e-4);
}

TEST(SelectTaskPairs, TwoTasksAreForced) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(select_task_pairs(2, rng), (std::vector<std::size_t>{1, 0}));
  EXPECT_ANY_THROW(select_task_pairs(1, rng));
}

TEST(SelectTaskPairs, UniformOverOtherTasks) {
  Rng rng(2);
  std::vector<std::vector<int>> count(3, std::vector<int>(3, 0));
  const int iters = 30000;
  for (int i = 0; i < iters; ++i) {
    auto s = select_task_pairs(3, rng);
    for (std::size_t t = 0; t < 3; ++t) ++count[t][s[t]];
  }
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(count[t][t], 0);
    for (std::size_t s = 0; s < 3; ++s) {
      if (s != t) {
        EXPECT_NEAR(count[t][s] / double(iters), 0.5, 0.01);
      }
    }
  }
}

TEST(SelectTaskPairs, SeededSequence) {
  Rng a(3), b(3);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(select_task_pairs(4, a), select_task_pairs(4, b));
}

class CtrLossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    nn::NetConfig nc;
    nc.feat_channels = 6;
    nc.proj_channels = 4;
    nc.encoder_blocks = 1;
    nc.decoder_blocks = 1;
    Rng rng(20);
    for (std::size_t t = 0; t < 2; ++t) feats.push_back(fixture::random_tensor({2, 6, 4, 4}, rng));
    labels.resize(2);
    for (std::size_t b = 0; b < 2; ++b) {
      labels[0].push_back(fixture::random_discrete(4, 4, 3, 0.1, rng));
      labels[1].push_back(fixture::random_scalar(4, 4, 0.1, rng));
    }
    net = std::make_unique<nn::MultiTaskNet>(nc, std::vector<TaskSpec>{segmentation_task("seg", 3), depth_task("depth")}, 1);
    cfg = mining_cfg(0.5, 3, 3);
  }
  std::vector<Tensor> feats;
  std::vector<std::vector<LabelMap>> labels;
  std::unique_ptr<nn::MultiTaskNet> net;
  CcrConfig cfg;
};

TEST_F(CtrLossTest, FullDoubleSumHasTwoTermsForTwoTasks) {
  cfg.task_pair_selection = false;
  Graph g;
  Rng rng(1);
  CtrResult r = ctr_loss(g, *net, feats, labels, cfg, rng, false);
  EXPECT_EQ(r.pairs.size(), 2u);
  EXPECT_EQ(r.stats.pairs, 2u);
  cfg.task_pair_selection = true;
  Rng rng2(1);
  EXPECT_EQ(ctr_loss(g, *net, feats, labels, cfg, rng2, false).pairs.size(), 2u);
}

TEST_F(CtrLossTest, EqualsSumOfIndependentPairTerms) {
  for (bool cts : {false, true}) {
    cfg.task_pair_selection = cts;
    Graph g(Graph::Mode::kNoGrad);
    Rng rng(5);
    CtrResult r = ctr_loss(g, *net, feats, labels, cfg, rng, false);
    // Per pair: batch mean of per-image terms, each mined with the stream
    // split(t * N + s).split(b) of the caller's generator.
    double expect = 0;
    const std::size_t n = 2;
    for (auto [t, s] : r.pairs) {
      Tensor fp = net->project(g, t, s, feats[t], false);
      double pair = 0;
      for (std::size_t b = 0; b < 2; ++b) {
        Rng ir = Rng(5).split(static_cast<std::uint64_t>(t * n + s)).split(static_cast<std::uint64_t>(b));
        TripletBatch tb = mine_triplets(fp, b, labels[s][b], net->tasks()[s].label_metric, cfg, ir);
        pair += triplet_regularization(g, fp, b, tb, cfg.margin, cfg.distance).item();
      }
      expect += pair / 2.0;
    }
    EXPECT_GT(expect, 0.0);
    EXPECT_NEAR(r.loss.item(), expect, 1e-12) << "cts=" << cts;
  }
}

TEST_F(CtrLossTest, EmptyLabelsGiveExactZero) {
  for (auto& per_task : labels) {
    for (auto& l : per_task) {
      l = l.kind() == TaskKind::kDiscrete ? LabelMap::discrete(4, 4, std::vector<std::int32_t>(16, 1))
                                          : LabelMap::continuous(1, 4, 4, std::vector<double>(16, 0.5),
                                                                 std::vector<std::uint8_t>(16, 0));
    }
  }
  Graph g;
  Rng rng(1);
  CtrResult r = ctr_loss(g, *net, feats, labels, cfg, rng, true);
  EXPECT_EQ(r.loss.item(), 0.0);
  EXPECT_EQ(r.stats.triplets, 0u);
}

TEST(TripletBlob, Layout) {
  TripletBatch b{{4, 7}, {1, 0}, {{2, 3}, {}}, {1, 0}, {0, 0}};
  Blob blob = triplets_to_blob("t", b, 3);
  EXPECT_EQ(blob.extents, (Shape{2, 7}));
  EXPECT_EQ(blob.i32, (std::vector<std::int32_t>{4, 1, 1, 0, 2, 3, -1, 7, -1, 0, 0, -1, -1, -1}));
}

}  // namespace
}  // namespace ccr
