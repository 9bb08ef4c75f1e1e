#pragma once

#include <vector>

#include "fsdepth/diffcore.hpp"
#include "fsdepth/scenepath.hpp"
#include "fsdepth/textpath.hpp"
#include "fsdepth/types.hpp"

namespace fsdepth {

/// Pre-pooling encoder output on an H x W patch grid. Row y * W + x of
/// `features` holds patch (y, x).
struct PatchFeatureMap {
  Eigen::Index grid_h = 0;
  Eigen::Index grid_w = 0;
  Matrix features;  // (H*W) x C
  Eigen::Index src_h = 0;
  Eigen::Index src_w = 0;
  Eigen::Index stride = 32;

  Eigen::Index width() const { return features.cols(); }
  /// Throws ValidationError unless H = ceil(src_h / stride), W likewise, and
  /// the feature matrix has H*W finite rows.
  void validate() const;
};

/// Per-patch cosine scores against the K text features: (H*W) x K.
struct SimilarityVolume {
  Eigen::Index grid_h = 0;
  Eigen::Index grid_w = 0;
  Matrix scores;
};

/// Per-patch softmax distribution over the K categories: (H*W) x K.
struct DepthWeightVolume {
  Eigen::Index grid_h = 0;
  Eigen::Index grid_w = 0;
  Matrix weights;
};

/// Depth in meters on the source pixel grid (h x w). Values <= 0 mark
/// invalid pixels when the map is ground truth.
struct PixelDepthMap {
  Matrix depth;

  Eigen::Index height() const { return depth.rows(); }
  Eigen::Index width() const { return depth.cols(); }
};

/// 1 where gt > 0, else 0.
inline Matrix valid_mask(const PixelDepthMap& gt) { return (gt.depth.array() > 0.0).cast<double>(); }

inline constexpr double kDefaultTau = 0.1;

SimilarityVolume patch_scores(const TextFeatureBank& bank, const PatchFeatureMap& fmap, double eps = 1e-12);

DepthWeightVolume depth_weights(const SimilarityVolume& scores, double tau);

/// Weighted sum of the bin per patch; returns an H x W map.
Matrix predict_patch_depth(const DepthWeightVolume& weights, const RowVector& bin);

/// Nearest-patch fill: pixel (y, x) takes patch (y / stride, x / stride).
PixelDepthMap upsample_to_pixels(const Matrix& patch_depth, Eigen::Index src_h, Eigen::Index src_w,
                                 Eigen::Index stride);

/// patch_scores -> depth_weights -> predict_patch_depth -> upsample_to_pixels.
PixelDepthMap predict(const TextFeatureBank& bank, const PatchFeatureMap& fmap, const SceneSelection& selection,
                      double tau);

/// Throws ValidationError unless every value lies in (0, max_depth].
void check_depth_range(const PixelDepthMap& map, double max_depth);

/// Flattened patch index of every pixel, in row-major pixel order.
std::vector<Eigen::Index> pixel_to_patch_index(Eigen::Index grid_w, Eigen::Index src_h, Eigen::Index src_w,
                                               Eigen::Index stride);

/// Records the prediction on `tape` given the K x C bank slot and 1 x K bin
/// slot; returns the (src_h*src_w) x 1 pixel depth column.
Var record_pixel_depth(Tape& tape, Var text_bank, const PatchFeatureMap& fmap, Var bin, double tau);

}  // namespace fsdepth
