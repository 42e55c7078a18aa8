#include "ccr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ccr/blob.hpp"

namespace ccr {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kStripePeriod = 4.0;

struct Region {
  bool ellipse = false;
  double cx = 0, cy = 0, rx = 1, ry = 1;
  std::int32_t cls = 0;
  double angle = 0;
  double ramp_x = 0, ramp_y = 0;
  std::size_t band = 0;
};

// Fixed palette: hue spread over the class count.
std::array<double, 3> tint(std::int32_t cls, std::size_t num_ids) {
  const double hue = static_cast<double>(cls) / static_cast<double>(num_ids);
  const double s = cls == 0 ? 0.15 : 0.65;
  const double h6 = hue * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h6, 2.0) - 1.0);
  std::array<double, 3> rgb{};
  switch (static_cast<int>(h6) % 6) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  for (double& v : rgb) v = (1.0 - s) + s * v;
  return rgb;
}

bool inside(const Region& r, double x, double y) {
  const double dx = (x - r.cx) / r.rx, dy = (y - r.cy) / r.ry;
  return r.ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
}

std::string sample_name(std::size_t i) {
  std::ostringstream os;
  os.width(5);
  os.fill('0');
  os << i;
  return os.str();
}

}  // namespace

void SynthOptions::validate() const {
  if (height < 16 || width < 16) throw std::invalid_argument("synth: height and width must be >= 16");
  if (height % 2 || width % 2) throw std::invalid_argument("synth: height and width must be even");
  if (classes < 2) throw std::invalid_argument("synth: need at least 2 classes");
  if (min_shapes < 1 || max_shapes < min_shapes) throw std::invalid_argument("synth: bad shape count range");
}

SceneSample generate_scene(const SynthOptions& opts, Rng& rng) {
  opts.validate();
  const std::size_t h = opts.height, w = opts.width, hw = h * w;
  const std::size_t num_ids = opts.classes + 1;
  const std::size_t n_shapes = opts.min_shapes + rng.uniform_index(opts.max_shapes - opts.min_shapes + 1);

  std::vector<Region> regions(n_shapes + 1);
  Region& bg = regions[0];
  bg.cx = 0.5 * static_cast<double>(w);
  bg.cy = 0.5 * static_cast<double>(h);
  bg.rx = bg.cx;
  bg.ry = bg.cy;
  for (std::size_t r = 1; r <= n_shapes; ++r) {
    Region& s = regions[r];
    s.ellipse = !opts.rectangles_only && rng.uniform() < 0.5;
    s.rx = rng.uniform(static_cast<double>(w) / 8.0, static_cast<double>(w) / 3.0);
    s.ry = rng.uniform(static_cast<double>(h) / 8.0, static_cast<double>(h) / 3.0);
    s.cx = rng.uniform(0.0, static_cast<double>(w));
    s.cy = rng.uniform(0.0, static_cast<double>(h));
    s.cls = 1 + static_cast<std::int32_t>(rng.uniform_index(opts.classes));
  }
  // Geometry follows the class, as floors and walls do in real scenes: each
  // class has its own orientation (jittered per shape), and depth bands are
  // handed out in class order with the background farthest. Every region
  // still owns a disjoint band; a ramp spans at most 40% of it, so any two
  // pixels of one region are closer in depth than any two pixels of
  // different regions.
  std::vector<std::size_t> order(regions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const std::size_t ka = regions[a].cls == 0 ? num_ids : static_cast<std::size_t>(regions[a].cls);
    const std::size_t kb = regions[b].cls == 0 ? num_ids : static_cast<std::size_t>(regions[b].cls);
    return ka < kb;
  });
  for (std::size_t i = 0; i < order.size(); ++i) regions[order[i]].band = i;
  const double spacing = kTwoPi / static_cast<double>(num_ids);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    Region& s = regions[r];
    s.angle = spacing * (static_cast<double>(s.cls) + rng.uniform(-0.25, 0.25));
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
    const double l1 = std::abs(a) + std::abs(b);
    s.ramp_x = l1 > 0 ? 0.5 * a / l1 : 0.0;
    s.ramp_y = l1 > 0 ? 0.5 * b / l1 : 0.0;
  }
  const double band_width = 0.9 / static_cast<double>(regions.size());

  SceneSample out;
  out.region.assign(hw, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (std::size_t r = n_shapes; r >= 1; --r) {
        if (inside(regions[r], px, py)) {
          out.region[y * w + x] = static_cast<std::int32_t>(r);
          break;
        }
      }
    }
  }

  std::vector<std::int32_t> seg(hw);
  std::vector<double> depth(hw), orient(2 * hw);
  Tensor image({3, h, w});
  auto img = image.mutable_data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const Region& s = regions[static_cast<std::size_t>(out.region[i])];
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double u = std::clamp((px - s.cx) / s.rx, -1.0, 1.0);
      const double v = std::clamp((py - s.cy) / s.ry, -1.0, 1.0);
      const double ramp = 0.5 + s.ramp_x * u + s.ramp_y * v;
      const double d = 0.1 + band_width * (static_cast<double>(s.band) + 0.3 + 0.4 * ramp);
      depth[i] = d;
      orient[i] = std::cos(s.angle);
      orient[hw + i] = std::sin(s.angle);
      const bool frame = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
      seg[i] = frame ? LabelMap::kIgnore : s.cls;

      // Stripes run at half the label angle so that the texture direction
      // (defined modulo pi) determines the full orientation.
      const double phi = 0.5 * s.angle;
      const double stripe =
          0.08 * std::sin(kTwoPi * (px * std::cos(phi) + py * std::sin(phi)) / kStripePeriod);
      const double shade = 1.0 - 0.5 * d;
      const auto rgb = tint(s.cls, num_ids);
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = rgb[c] * shade + stripe + rng.normal(0.0, opts.noise_sigma);
        img[c * hw + i] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
  out.image = std::move(image);
  out.seg = LabelMap::discrete(h, w, std::move(seg));
  out.depth = LabelMap::continuous(1, h, w, std::move(depth), std::vector<std::uint8_t>(hw, 1));
  out.orient = LabelMap::continuous(2, h, w, std::move(orient), std::vector<std::uint8_t>(hw, 1));
  return out;
}

namespace {

Blob continuous_blob(const std::string& name, const LabelMap& m) {
  const std::size_t c = m.channels(), hw = m.pixels();
  Tensor t({c + 1, m.height(), m.width()});
  auto d = t.mutable_data();
  std::copy(m.values().begin(), m.values().end(), d.begin());
  for (std::size_t i = 0; i < hw; ++i) d[c * hw + i] = m.valid()[i] ? 1.0 : 0.0;
  return make_blob(name, t);
}

LabelMap continuous_from_blob(const Blob& b, std::size_t channels, const std::string& what) {
  if (b.dtype != DType::kF32 || b.extents.size() != 3 || b.extents[0] != channels + 1) {
    throw std::runtime_error(what + ": expected f32 [" + std::to_string(channels + 1) +
                             " x H x W], got " + shape_str(b.extents));
  }
  const std::size_t h = b.extents[1], w = b.extents[2], hw = h * w;
  std::vector<double> values(channels * hw);
  std::vector<std::uint8_t> valid(hw);
  for (std::size_t i = 0; i < channels * hw; ++i) values[i] = b.f32[i];
  for (std::size_t i = 0; i < hw; ++i) valid[i] = b.f32[channels * hw + i] != 0.0f ? 1 : 0;
  return LabelMap::continuous(channels, h, w, std::move(values), std::move(valid));
}

}  // namespace

Manifest generate_dataset(std::size_t n_samples, const SynthOptions& opts, std::uint64_t seed,
                          const std::filesystem::path& out_dir, const std::string& split) {
  opts.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / split, ec);
  if (ec) throw std::runtime_error("gen-data: cannot create '" + (out_dir / split).string() + "': " + ec.message());

  Manifest manifest;
  manifest.path = out_dir / (split + ".tsv");
  std::ofstream tsv(manifest.path, std::ios::trunc);
  if (!tsv) throw std::runtime_error("gen-data: cannot write '" + manifest.path.string() + "'");

  const Rng root(seed);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    SceneSample s = generate_scene(opts, rng);
    const std::string id = split + "_" + sample_name(i);
    const fs::path rel = fs::path(split);
    ManifestEntry e{id, out_dir / rel / (id + "_image.ccrt"), out_dir / rel / (id + "_seg.ccrt"),
                    out_dir / rel / (id + "_depth.ccrt"), out_dir / rel / (id + "_orient.ccrt")};
    write_blob(e.image, make_blob("image", s.image));
    write_blob(e.seg, make_blob("seg", {opts.height, opts.width},
                                std::vector<std::int32_t>(s.seg.classes().begin(), s.seg.classes().end())));
    write_blob(e.depth, continuous_blob("depth", s.depth));
    write_blob(e.orient, continuous_blob("orient", s.orient));
    tsv << id << '\t' << (rel / e.image.filename()).generic_string() << '\t'
        << (rel / e.seg.filename()).generic_string() << '\t'
        << (rel / e.depth.filename()).generic_string() << '\t'
        << (rel / e.orient.filename()).generic_string() << '\n';
    manifest.entries.push_back(std::move(e));
  }
  if (!tsv) throw std::runtime_error("gen-data: failed writing '" + manifest.path.string() + "'");
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest not found: '" + path.string() + "'");
  Manifest m;
  m.path = path;
  const auto base = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t p = 0;
    while (true) {
      const std::size_t tab = line.find('\t', p);
      cols.push_back(line.substr(p, tab - p));
      if (tab == std::string::npos) break;
      p = tab + 1;
    }
    if (cols.size() != 5) {
      throw std::runtime_error("manifest '" + path.string() + "' line " + std::to_string(lineno) +
                               ": expected 5 tab-separated fields, got " + std::to_string(cols.size()));
    }
    m.entries.push_back({cols[0], base / cols[1], base / cols[2], base / cols[3], base / cols[4]});
  }
  return m;
}

std::vector<SceneSample> load_dataset(const Manifest& manifest) {
  std::vector<SceneSample> out;
  out.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) {
    for (const auto* p : {&e.image, &e.seg, &e.depth, &e.orient}) {
      if (!std::filesystem::exists(*p)) {
        throw std::runtime_error("dataset: sample '" + e.id + "' references missing blob '" +
                                 p->string() + "'");
      }
    }
    SceneSample s;
    const Blob img = read_blob(e.image);
    if (img.dtype != DType::kF32 || img.extents.size() != 3 || img.extents[0] != 3) {
      throw std::runtime_error("dataset: '" + e.image.string() + "' is not an f32 [3 x H x W] image");
    }
    s.image = to_tensor(img);
    const std::size_t h = img.extents[1], w = img.extents[2];
    Blob seg = read_blob(e.seg);
    if (seg.dtype != DType::kI32 || seg.extents != Shape{h, w}) {
      throw std::runtime_error("dataset: '" + e.seg.string() + "' is not an i32 [H x W] label map");
    }
    s.seg = LabelMap::discrete(h, w, std::move(seg.i32));
    s.depth = continuous_from_blob(read_blob(e.depth), 1, e.depth.string());
    s.orient = continuous_from_blob(read_blob(e.orient), 2, e.orient.string());
    if (s.depth.height() != h || s.orient.height() != h || s.depth.width() != w || s.orient.width() != w) {
      throw std::runtime_error("dataset: sample '" + e.id + "' has mismatched label sizes");
    }
    for (std::size_t i = 0; i < s.orient.pixels(); ++i) {
      if (s.orient.ignored(i)) continue;
      const double n = std::hypot(s.orient.value(0, i), s.orient.value(1, i));
      if (std::abs(n - 1.0) > 1e-6) {
        throw std::runtime_error("dataset: '" + e.orient.string() + "' holds a non-unit vector at pixel " +
                                 std::to_string(i));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SceneSample> load_dataset(const std::filesystem::path& manifest_path) {
  return load_dataset(read_manifest(manifest_path));
}

}  // namespace ccr
