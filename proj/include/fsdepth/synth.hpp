#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsdepth/bundleio.hpp"
#include "fsdepth/trainer.hpp"

namespace fsdepth {

struct SynthOptions {
  int scenes = 3;
  std::uint64_t seed = 0;
  Eigen::Index src_h = 30;
  Eigen::Index src_w = 40;
  Eigen::Index stride = 8;
  int test_per_scene = 1;
  double max_depth = 10.0;
  /// Fraction of ground-truth pixels marked invalid (value 0).
  double invalid_fraction = 0.05;
  double pixel_noise = 0.02;
  /// Scene depth offsets are drawn uniformly from +-offset_range meters.
  double offset_range = 0.4;
};

/// A small few-shot dataset whose text-patch similarity is learnable.
///
/// Every patch has a hidden depth category c. Its feature is the text feature
/// category c receives under a hidden target context, plus noise, so the
/// prompt context can learn to align with the patches. Scene j draws a depth
/// offset o_j; ground truth of a category-c patch is init_bin[c] + o_j plus
/// per-pixel noise. Each scene uses a random subset of the categories laid
/// out far-to-near from the top of the image.
struct SynthDataset {
  RunConfig config;
  FrozenModel frozen;
  std::vector<FewShotSample> train;
  std::vector<FewShotSample> test;
  std::vector<double> scene_offsets;
};

SynthDataset make_synthetic_dataset(const SynthOptions& options, const RunConfig& config = {});

/// Writes manifest.txt, config.txt, scene_bank.dfb, images/*.dfb and gt/*.dfb
/// under `dir`. Returns the manifest path.
std::filesystem::path write_synthetic_fixture(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace fsdepth
