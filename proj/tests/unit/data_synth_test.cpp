#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ccr/blob.hpp"
#include "ccr/synth.hpp"
#include "oracles/fixtures.hpp"

namespace ccr {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(Blob, F32RoundTrip) {
  fixture::TempDir dir("blob");
  Tensor t({2, 3}, {1.5, -2, 3.25, 0, 1e-3, 7});
  write_blob(dir.path() / "a.ccrt", make_blob("weights", t));
  Blob b = read_blob(dir.path() / "a.ccrt");
  EXPECT_EQ(b.name, "weights");
  EXPECT_EQ(b.dtype, DType::kF32);
  EXPECT_EQ(b.extents, (Shape{2, 3}));
  Tensor back = to_tensor(b);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(back.data()[i], static_cast<float>(t.data()[i]));
}

TEST(Blob, I32RoundTripKeepsIgnoreSentinel) {
  std::stringstream ss;
  write_blob(ss, make_blob("seg", {2, 2}, {0, -1, 5, -1}));
  Blob b;
  ASSERT_TRUE(read_blob(ss, b));
  EXPECT_EQ(b.dtype, DType::kI32);
  EXPECT_EQ(b.i32, (std::vector<std::int32_t>{0, -1, 5, -1}));
  Blob again;
  EXPECT_FALSE(read_blob(ss, again));  // clean end of stream
}

TEST(Blob, BitExactLayout) {
  std::stringstream ss;
  write_blob(ss, make_blob("x", {2}, {1, -1}));
  const std::string header = "rank=1;extents=2;dtype=i32;name=x";
  std::string expect = "CCRT";
  expect.push_back('\x01');
  expect.push_back(static_cast<char>(header.size()));
  expect.append(3, '\0');
  expect += header;
  expect += std::string("\x01\x00\x00\x00\xff\xff\xff\xff", 8);
  EXPECT_EQ(ss.str(), expect);

  std::stringstream f;
  write_blob(f, make_blob("s", Tensor({}, std::vector<double>{1.0})));
  const std::string fh = "rank=0;extents=;dtype=f32;name=s";
  EXPECT_EQ(f.str().substr(9, fh.size()), fh);
  EXPECT_EQ(f.str().substr(9 + fh.size()), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Blob, RejectsCorruption) {
  std::stringstream ss;
  write_blob(ss, make_blob("v", {4}, {1, 2, 3, 4}));
  const std::string good = ss.str();
  auto read_str = [](std::string s) {
    std::stringstream in(s);
    Blob b;
    read_blob(in, b);
  };
  EXPECT_NE(error_of([&] { read_str(good.substr(0, good.size() - 3)); }).find("payload length mismatch"),
            std::string::npos);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_NE(error_of([&] { read_str(bad_magic); }).find("magic"), std::string::npos);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_NE(error_of([&] { read_str(bad_version); }).find("version"), std::string::npos);
  std::string bad_dtype = good;
  bad_dtype.replace(bad_dtype.find("i32"), 3, "f64");
  EXPECT_NE(error_of([&] { read_str(bad_dtype); }).find("dtype"), std::string::npos);
  std::string bad_rank = good;
  bad_rank.replace(bad_rank.find("rank=1"), 6, "rank=2");
  EXPECT_NE(error_of([&] { read_str(bad_rank); }).find("extents"), std::string::npos);

  fixture::TempDir dir("blobtail");
  std::ofstream(dir.path() / "t.ccrt", std::ios::binary) << good << "zz";
  EXPECT_NE(error_of([&] { read_blob(dir.path() / "t.ccrt"); }).find("payload length mismatch"), std::string::npos);
}

SynthOptions small_opts() {
  SynthOptions o;
  o.height = o.width = 16;
  return o;
}

TEST(Synth, SceneInvariants) {
  Rng root(5);
  for (std::uint64_t i = 0; i < 20; ++i) {
    Rng rng = root.split(i);
    SceneSample s = generate_scene(SynthOptions{}, rng);
    ASSERT_EQ(s.image.shape(), (Shape{3, 64, 64}));
    for (double v : s.image.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    for (std::size_t p = 0; p < s.depth.pixels(); ++p) {
      ASSERT_GE(s.depth.value(0, p), 0.1);
      ASSERT_LE(s.depth.value(0, p), 1.0);
      ASSERT_NEAR(std::hypot(s.orient.value(0, p), s.orient.value(1, p)), 1.0, 1e-12);
      const std::size_t y = p / 64, x = p % 64;
      const bool frame = y == 0 || x == 0 || y == 63 || x == 63;
      ASSERT_EQ(s.seg.ignored(p), frame);
      if (!frame) {
        ASSERT_GE(s.seg.class_at(p), 0);
        ASSERT_LE(s.seg.class_at(p), 6);
      }
    }
  }
}

TEST(Synth, OneRectangleTwoClassesHistogram) {
  SynthOptions o = small_opts();
  o.classes = 2;
  o.min_shapes = o.max_shapes = 1;
  o.rectangles_only = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    SceneSample s = generate_scene(o, rng);
    std::set<std::int32_t> ids(s.seg.classes().begin(), s.seg.classes().end());
    EXPECT_EQ(ids.size(), 3u) << "seed " << seed;
    EXPECT_TRUE(ids.count(0) && ids.count(LabelMap::kIgnore));
  }
}

TEST(Synth, SameShapePairsBeatCrossShapeGapExhaustively) {
  Rng rng(11);
  SceneSample s = generate_scene(small_opts(), rng);
  const std::size_t n = 256;
  double within = 0, across = 1e9;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::abs(s.depth.value(0, i) - s.depth.value(0, j));
      if (s.region[i] == s.region[j]) {
        within = std::max(within, d);
        if (!s.seg.ignored(i) && !s.seg.ignored(j)) {
          ASSERT_EQ(s.seg.class_at(i), s.seg.class_at(j));
        }
      } else {
        across = std::min(across, d);
      }
    }
  }
  EXPECT_LT(within, across);
}

TEST(Synth, EqualSegLabelsMeanCloserDepth) {
  fixture::TempDir dir("consistency");
  generate_dataset(20, SynthOptions{}, 3, dir.path(), "train");
  auto data = load_dataset(dir.path() / "train.tsv");
  Rng rng(4);
  double same = 0, diff = 0;
  std::size_t ns = 0, nd = 0;
  while (ns + nd < 10000) {
    const SceneSample& s = data[rng.uniform_index(data.size())];
    const std::size_t i = rng.uniform_index(s.seg.pixels()), j = rng.uniform_index(s.seg.pixels());
    if (i == j || s.seg.ignored(i) || s.seg.ignored(j)) continue;
    const double d = std::abs(s.depth.value(0, i) - s.depth.value(0, j));
    if (s.seg.class_at(i) == s.seg.class_at(j)) {
      same += d;
      ++ns;
    } else {
      diff += d;
      ++nd;
    }
  }
  ASSERT_GT(ns, 100u);
  ASSERT_GT(nd, 100u);
  EXPECT_LT(same / ns + 0.05, diff / nd);
}

TEST(Synth, SeededDatasetIsBitIdentical) {
  fixture::TempDir a("synth-a"), b("synth-b");
  auto ma = generate_dataset(3, small_opts(), 7, a.path(), "train");
  auto mb = generate_dataset(3, small_opts(), 7, b.path(), "train");
  EXPECT_EQ(slurp(ma.path), slurp(mb.path));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(slurp(ma.entries[i].image), slurp(mb.entries[i].image));
    EXPECT_EQ(slurp(ma.entries[i].seg), slurp(mb.entries[i].seg));
    EXPECT_EQ(slurp(ma.entries[i].depth), slurp(mb.entries[i].depth));
    EXPECT_EQ(slurp(ma.entries[i].orient), slurp(mb.entries[i].orient));
  }
  fixture::TempDir c("synth-c");
  auto mc = generate_dataset(3, small_opts(), 8, c.path(), "train");
  EXPECT_NE(slurp(ma.entries[0].image), slurp(mc.entries[0].image));
}

TEST(Synth, ManifestFormatAndLoad) {
  fixture::TempDir dir("manifest");
  generate_dataset(2, small_opts(), 1, dir.path(), "test");
  std::ifstream is(dir.path() / "test.tsv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "test_00000\ttest/test_00000_image.ccrt\ttest/test_00000_seg.ccrt\t"
                  "test/test_00000_depth.ccrt\ttest/test_00000_orient.ccrt");
  auto m = read_manifest(dir.path() / "test.tsv");
  ASSERT_EQ(m.entries.size(), 2u);
  for (const auto& e : m.entries) {
    for (const auto& p : {e.image, e.seg, e.depth, e.orient}) EXPECT_TRUE(fs::exists(p)) << p;
  }
  auto data = load_dataset(m);
  Rng rng = Rng(1).split(std::uint64_t{1});
  SceneSample direct = generate_scene(small_opts(), rng);
  EXPECT_EQ(std::vector<std::int32_t>(data[1].seg.classes().begin(), data[1].seg.classes().end()),
            std::vector<std::int32_t>(direct.seg.classes().begin(), direct.seg.classes().end()));
  for (std::size_t i = 0; i < direct.image.numel(); ++i) {
    ASSERT_EQ(data[1].image.data()[i], static_cast<float>(direct.image.data()[i]));
  }
}

TEST(Synth, LoaderFailsLoudlyOnMissingBlob) {
  fixture::TempDir dir("missing");
  auto m = generate_dataset(2, small_opts(), 1, dir.path(), "train");
  fs::remove(m.entries[1].depth);
  const std::string msg = error_of([&] { load_dataset(dir.path() / "train.tsv"); });
  EXPECT_NE(msg.find("missing blob"), std::string::npos) << msg;
  EXPECT_NE(msg.find("train_00001_depth"), std::string::npos) << msg;
  EXPECT_NE(error_of([&] { read_manifest(dir.path() / "nope.tsv"); }).find("manifest not found"), std::string::npos);
}

TEST(Synth, UnwritableOutDirFails) {
  fixture::TempDir dir("unwritable");
  std::ofstream(dir.path() / "file") << "x";
  EXPECT_THROW(generate_dataset(1, small_opts(), 1, dir.path() / "file", "train"), std::runtime_error);
}

TEST(Synth, OptionValidation) {
  SynthOptions o;
  o.height = 8;
  EXPECT_THROW(o.validate(), std::invalid_argument);
  o = SynthOptions{};
  o.classes = 1;
  EXPECT_THROW(o.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace ccr
