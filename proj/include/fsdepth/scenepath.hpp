#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fsdepth/types.hpp"

namespace fsdepth {

/// Initial indoor depth bin in meters, one value per default category.
const std::vector<double>& default_depth_bin();

/// Frozen per-scene features, one row per few-shot sample.
struct SceneFeatureBank {
  std::vector<std::string> labels;
  Matrix features;  // N x C

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index width() const { return features.cols(); }

  /// N >= 1, unique labels, finite rows that are not all zero.
  void validate() const;
  /// Index of `label`, or BoundsError.
  std::size_t index_of(const std::string& label) const;
};

/// Learnable N x K matrix of per-scene depth bins (meters).
struct DepthCodebook {
  Matrix theta;

  Eigen::Index scenes() const { return theta.rows(); }
  Eigen::Index categories() const { return theta.cols(); }

  /// Every entry > 0 and <= max_depth.
  void validate(double max_depth) const;
  /// Clamps every entry into [min_depth, max_depth].
  void clamp(double min_depth, double max_depth);
};

inline constexpr double kMinCodebookDepth = 0.01;

struct SceneSelection {
  std::size_t index = 0;
  Vector similarities;
  RowVector bin;
};

DepthCodebook init_codebook(Eigen::Index n_scenes, const RowVector& init_bin);

/// Cosine similarity of `query` against every bank row. Rows are used as
/// stored; the query norm is eps-guarded.
Vector scene_similarity(const RowVector& query, const SceneFeatureBank& bank, double eps = 1e-12);

/// Smallest index attaining the maximum.
std::size_t select_scene(const Vector& similarities);

/// Copy of codebook row `index`.
RowVector select_bin(const DepthCodebook& codebook, std::size_t index);

/// Similarity, argmax and bin lookup in one call.
SceneSelection select(const RowVector& query, const SceneFeatureBank& bank, const DepthCodebook& codebook);

}  // namespace fsdepth
