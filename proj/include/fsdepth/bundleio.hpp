#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsdepth/depthhead.hpp"
#include "fsdepth/errors.hpp"
#include "fsdepth/scenepath.hpp"
#include "fsdepth/textpath.hpp"
#include "fsdepth/trainer.hpp"
#include "fsdepth/types.hpp"

namespace fsdepth {

// ---------------------------------------------------------------------------
// Feature bundle container
//
//   bytes 0..3    magic "DFB1"
//   bytes 4..11   header length L, unsigned 64-bit little-endian
//   bytes 12..    L bytes of UTF-8 header text
//   then          tensor payloads, float32 little-endian, at the offsets the
//                 header declares (relative to the first payload byte)
//
// Header text is "key = value" metadata lines, then a line "[tensors]",
// then one line per tensor:
//
//   <name> f32 <d0>[x<d1>[x<d2>]] <offset> <length> <crc32 as 8 hex digits>
//
// Lines starting with '#' and blank lines are ignored.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kBundleMagic = "DFB1";

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;  // 1 to 3 dimensions
  std::vector<float> data;

  std::size_t element_count() const;
};

struct Bundle {
  std::map<std::string, std::string> metadata;
  std::vector<TensorEntry> tensors;

  bool has_tensor(const std::string& name) const;
  const TensorEntry& tensor(const std::string& name) const;
  /// Adds or replaces a tensor; values are rounded to float32.
  void put_tensor(const std::string& name, std::vector<std::size_t> shape, const Matrix& values);
  /// The tensor as a matrix: 1-D -> 1 x d0, 2-D -> d0 x d1, 3-D -> (d0*d1) x d2.
  Matrix matrix(const std::string& name) const;

  const std::string& meta(const std::string& key) const;
  std::optional<std::string> find_meta(const std::string& key) const;
  double meta_double(const std::string& key) const;
  std::int64_t meta_int(const std::string& key) const;
  std::uint64_t meta_u64(const std::string& key) const;
  std::vector<std::string> meta_list(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
  void set_meta(const std::string& key, double value);
  void set_meta(const std::string& key, std::int64_t value);
  void set_meta(const std::string& key, std::uint64_t value);
  void set_meta_list(const std::string& key, const std::vector<std::string>& values);
};

enum class BundleErrorKind {
  kIo,
  kBadMagic,
  kTruncated,
  kHeader,
  kOverlap,
  kShapeMismatch,
  kChecksum,
  kDuplicate,
  kTrailingData,
  kMissing,
};

const char* to_string(BundleErrorKind kind);

class BundleError : public ValidationError {
 public:
  BundleError(BundleErrorKind kind, const std::string& message)
      : ValidationError(std::string(to_string(kind)) + ": " + message), kind_(kind) {}
  BundleErrorKind kind() const { return kind_; }

 private:
  BundleErrorKind kind_;
};

/// Rounds every entry to the nearest float32, which is what a bundle stores.
Matrix round_to_f32(const Matrix& m);

std::string encode_bundle(const Bundle& bundle);
Bundle decode_bundle(std::string_view bytes);

/// Writes to a temporary file in the same directory, then renames it over `path`.
void write_bundle(const Bundle& bundle, const std::filesystem::path& path);
Bundle read_bundle(const std::filesystem::path& path);

/// Writes `contents` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Bundle kinds
// ---------------------------------------------------------------------------

namespace bundle_kind {
inline constexpr const char* kImage = "image";
inline constexpr const char* kSceneBank = "scene-bank";
inline constexpr const char* kModel = "model";
inline constexpr const char* kDepth = "depth";
inline constexpr const char* kGroundTruth = "gt";
inline constexpr const char* kTokens = "tokens";
}  // namespace bundle_kind

struct Finding {
  std::string code;
  std::string message;
};

/// Checks an already-decoded bundle against the requirements of `kind` (or
/// its own "kind" metadata when `kind` is empty).
std::vector<Finding> validate_bundle(const Bundle& bundle, const std::string& kind = {});

/// Reads and checks `path`. Never throws; every problem becomes a finding.
std::vector<Finding> validate_bundle(const std::filesystem::path& path, const std::string& kind = {});

/// One image's encoder outputs.
struct ImageFeatures {
  RowVector scene_feature;
  PatchFeatureMap patches;
};

Bundle make_image_bundle(const ImageFeatures& image);
ImageFeatures image_from_bundle(const Bundle& bundle);

Bundle make_depth_bundle(const PixelDepthMap& depth, const char* kind);
PixelDepthMap depth_from_bundle(const Bundle& bundle);

Bundle make_scene_bank_bundle(const SceneFeatureBank& bank);
SceneFeatureBank scene_bank_from_bundle(const Bundle& bundle);

Bundle make_tokens_bundle(const CategoryTokenSet& tokens);
CategoryTokenSet tokens_from_bundle(const Bundle& bundle);

/// Learned parameters plus what is needed to rebuild the frozen text path.
struct ModelBundle {
  PromptContext prompt;
  DepthCodebook codebook;
  CategoryTokenSet categories;
  std::vector<std::string> scene_labels;
  EncoderDims dims;
  std::uint64_t encoder_seed = 0;
  TrainConfig config;
  std::vector<double> loss_history;
};

Bundle make_model_bundle(const ModelBundle& model);
ModelBundle model_from_bundle(const Bundle& bundle);

// ---------------------------------------------------------------------------
// Flat "key = value" documents: manifest and run configuration
// ---------------------------------------------------------------------------

/// Parses "key = value" lines in order; keys may repeat. '#' starts a comment
/// line. Throws ValidationError naming `source` and the line number.
std::vector<std::pair<std::string, std::string>> parse_flat_document(std::string_view text,
                                                                     const std::string& source);

struct ManifestEntry {
  std::string scene_label;
  bool train = false;
  std::filesystem::path image;
  std::filesystem::path gt;

  /// Stem of the image bundle file name; used to name predictions.
  std::string image_id() const;
};

/// Dataset description. Entry lines read
///   entry = <scene_label> <train|test> <image bundle> <gt bundle>
/// with paths relative to the manifest's directory.
struct DatasetManifest {
  double max_depth = 10.0;
  Eigen::Index patch_stride = 32;
  Eigen::Index n_scenes = 0;
  Eigen::Index n_categories = 0;
  std::vector<std::string> category_labels;
  std::optional<std::filesystem::path> category_tokens;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> train_entries() const;
  std::vector<const ManifestEntry*> test_entries() const;
  void validate(bool check_paths = true) const;
};

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                               const std::string& source = "manifest");
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

/// Training hyperparameters plus encoder shape. Unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  bool max_depth_set = false;
  Eigen::Index context_length = 3;
  EncoderDims dims;
  std::uint64_t encoder_seed = 1;
  std::uint64_t token_seed = 2;
  std::vector<double> init_bin = default_depth_bin();
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> model_out;

  void validate() const;
};

RunConfig parse_run_config(std::string_view text, const std::string& source = "config");
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& config);

// ---------------------------------------------------------------------------
// 16-bit grayscale export
// ---------------------------------------------------------------------------

/// Binary PGM (P5, maxval 65535, big-endian samples). Pixel value is
/// round(depth / max_depth * 65535) clamped to [0, 65535]; a comment line
/// "# max_depth=<value>" records the scale.
std::string encode_pgm(const PixelDepthMap& depth, double max_depth);
void export_pgm(const PixelDepthMap& depth, double max_depth, const std::filesystem::path& path);

struct GrayImage {
  Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pixels;
  double max_depth = 0.0;

  /// Depth recovered as value / 65535 * max_depth.
  PixelDepthMap to_depth() const;
};

GrayImage decode_pgm(std::string_view bytes);

}  // namespace fsdepth
