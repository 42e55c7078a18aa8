#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccr/rng.hpp"
#include "ccr/tasks.hpp"
#include "ccr/tensor.hpp"

namespace ccr {

struct SynthOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  // Foreground classes; class 0 is background, so maps hold classes + 1 ids.
  std::size_t classes = 6;
  std::size_t min_shapes = 3;
  std::size_t max_shapes = 7;
  bool rectangles_only = false;
  double noise_sigma = 0.05;

  void validate() const;
};

// One synthetic scene. Every label map is a function of the same latent
// region layout, so the three tasks agree on boundaries.
struct SceneSample {
  Tensor image;       // [3 x H x W] in [0, 1]
  LabelMap seg;       // classes + 1 ids, 1-pixel ignore frame
  LabelMap depth;     // 1 channel in [0.1, 1.0]
  LabelMap orient;    // 2 channels, unit vectors
  std::vector<std::int32_t> region;  // latent region id per pixel (0 = background)
};

SceneSample generate_scene(const SynthOptions& opts, Rng& rng);

struct ManifestEntry {
  std::string id;
  std::filesystem::path image, seg, depth, orient;  // absolute
};

struct Manifest {
  std::filesystem::path path;
  std::vector<ManifestEntry> entries;
};

// Writes `n_samples` scenes as blobs under out_dir/<split>/ and the manifest
// out_dir/<split>.tsv (one `id<TAB>image<TAB>seg<TAB>depth<TAB>orient` line
// per sample, paths relative to out_dir). Sample i uses Rng(seed).split(i).
Manifest generate_dataset(std::size_t n_samples, const SynthOptions& opts, std::uint64_t seed,
                          const std::filesystem::path& out_dir, const std::string& split);

Manifest read_manifest(const std::filesystem::path& path);

// Loads every sample in the manifest; throws naming the first missing or
// malformed blob.
std::vector<SceneSample> load_dataset(const Manifest& manifest);
std::vector<SceneSample> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace ccr
