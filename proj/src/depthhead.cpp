#include "fsdepth/depthhead.hpp"

#include "fsdepth/errors.hpp"

namespace fsdepth {

namespace {

Eigen::Index ceil_div(Eigen::Index a, Eigen::Index b) { return (a + b - 1) / b; }

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("temperature tau must be positive, got " + std::to_string(tau));
}

void check_geometry(Eigen::Index grid_h, Eigen::Index grid_w, Eigen::Index src_h, Eigen::Index src_w,
                    Eigen::Index stride) {
  if (stride <= 0) throw ValidationError("patch stride must be positive, got " + std::to_string(stride));
  if (src_h <= 0 || src_w <= 0) throw ValidationError("source dims must be positive, got " + shape_str(src_h, src_w));
  if (grid_h * stride < src_h || grid_w * stride < src_w) {
    throw ValidationError("patch grid " + shape_str(grid_h, grid_w) + " at stride " + std::to_string(stride) +
                          " does not cover " + shape_str(src_h, src_w) + " pixels");
  }
}

}  // namespace

void PatchFeatureMap::validate() const {
  check_geometry(grid_h, grid_w, src_h, src_w, stride);
  if (grid_h != ceil_div(src_h, stride) || grid_w != ceil_div(src_w, stride)) {
    throw ValidationError("patch grid " + shape_str(grid_h, grid_w) + " inconsistent with source " +
                          shape_str(src_h, src_w) + " at stride " + std::to_string(stride) + " (expected " +
                          shape_str(ceil_div(src_h, stride), ceil_div(src_w, stride)) + ")");
  }
  if (features.rows() != grid_h * grid_w || features.cols() < 1) {
    throw ValidationError("patch features " + shape_str(features) + " do not match grid " + shape_str(grid_h, grid_w));
  }
  if (!features.allFinite()) throw ValidationError("patch features contain non-finite values");
}

SimilarityVolume patch_scores(const TextFeatureBank& bank, const PatchFeatureMap& fmap, double eps) {
  if (bank.features.cols() != fmap.width()) {
    throw DimensionError("patch_scores: text feature width " + std::to_string(bank.features.cols()) +
                         " != patch feature width " + std::to_string(fmap.width()));
  }
  const Matrix patches = l2_normalize_rows(fmap.features, eps);
  const Matrix text_t = l2_normalize_rows(bank.features, eps).transpose();
  return SimilarityVolume{fmap.grid_h, fmap.grid_w, patches * text_t};
}

DepthWeightVolume depth_weights(const SimilarityVolume& scores, double tau) {
  require_tau(tau);
  return DepthWeightVolume{scores.grid_h, scores.grid_w, softmax_rows(scores.scores * (1.0 / tau))};
}

Matrix predict_patch_depth(const DepthWeightVolume& weights, const RowVector& bin) {
  if (bin.size() != weights.weights.cols()) {
    throw DimensionError("predict_patch_depth: bin length " + std::to_string(bin.size()) + " != " +
                         std::to_string(weights.weights.cols()) + " categories");
  }
  if ((bin.array() <= 0.0).any()) throw ValidationError("predict_patch_depth: bin entries must be positive");
  const Matrix bin_t = bin.transpose();
  const Matrix flat = weights.weights * bin_t;
  return Eigen::Map<const Matrix>(flat.data(), weights.grid_h, weights.grid_w);
}

PixelDepthMap upsample_to_pixels(const Matrix& patch_depth, Eigen::Index src_h, Eigen::Index src_w,
                                 Eigen::Index stride) {
  check_geometry(patch_depth.rows(), patch_depth.cols(), src_h, src_w, stride);
  PixelDepthMap out{Matrix(src_h, src_w)};
  for (Eigen::Index y = 0; y < src_h; ++y) {
    for (Eigen::Index x = 0; x < src_w; ++x) out.depth(y, x) = patch_depth(y / stride, x / stride);
  }
  return out;
}

PixelDepthMap predict(const TextFeatureBank& bank, const PatchFeatureMap& fmap, const SceneSelection& selection,
                      double tau) {
  const SimilarityVolume scores = patch_scores(bank, fmap);
  const DepthWeightVolume weights = depth_weights(scores, tau);
  const Matrix patch_depth = predict_patch_depth(weights, selection.bin);
  return upsample_to_pixels(patch_depth, fmap.src_h, fmap.src_w, fmap.stride);
}

void check_depth_range(const PixelDepthMap& map, double max_depth) {
  for (Eigen::Index y = 0; y < map.height(); ++y) {
    for (Eigen::Index x = 0; x < map.width(); ++x) {
      const double d = map.depth(y, x);
      if (!(d > 0.0) || d > max_depth) {
        throw ValidationError("predicted depth " + std::to_string(d) + " at pixel (" + std::to_string(y) + ", " +
                              std::to_string(x) + ") outside (0, " + std::to_string(max_depth) + "]");
      }
    }
  }
}

std::vector<Eigen::Index> pixel_to_patch_index(Eigen::Index grid_w, Eigen::Index src_h, Eigen::Index src_w,
                                               Eigen::Index stride) {
  std::vector<Eigen::Index> index;
  index.reserve(static_cast<std::size_t>(src_h * src_w));
  for (Eigen::Index y = 0; y < src_h; ++y) {
    for (Eigen::Index x = 0; x < src_w; ++x) index.push_back((y / stride) * grid_w + x / stride);
  }
  return index;
}

Var record_pixel_depth(Tape& tape, Var text_bank, const PatchFeatureMap& fmap, Var bin, double tau) {
  require_tau(tau);
  if (tape.value(text_bank).cols() != fmap.width()) {
    throw DimensionError("patch_scores: text feature width " + std::to_string(tape.value(text_bank).cols()) +
                         " != patch feature width " + std::to_string(fmap.width()));
  }
  check_geometry(fmap.grid_h, fmap.grid_w, fmap.src_h, fmap.src_w, fmap.stride);
  Var patches = tape.constant(l2_normalize_rows(fmap.features));
  Var text_t = tape.transpose(tape.l2_normalize_rows(text_bank));
  Var weights = tape.softmax_rows(tape.scale(tape.matmul(patches, text_t), 1.0 / tau));
  Var patch_depth = tape.matmul(weights, tape.transpose(bin));
  return tape.gather_rows(patch_depth, pixel_to_patch_index(fmap.grid_w, fmap.src_h, fmap.src_w, fmap.stride));
}

}  // namespace fsdepth
