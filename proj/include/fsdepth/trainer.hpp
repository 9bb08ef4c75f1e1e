#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsdepth/depthhead.hpp"
#include "fsdepth/diffcore.hpp"
#include "fsdepth/scenepath.hpp"
#include "fsdepth/textpath.hpp"

namespace fsdepth {

struct TrainConfig {
  double lr_prompt = 0.5;
  double lr_codebook = 0.01;
  double weight_decay = 1e-5;           // applied to the prompt context
  double codebook_weight_decay = 0.0;   // applied to the selected codebook row
  int epochs = 200;
  double tau = kDefaultTau;
  std::uint64_t seed = 0;
  double max_depth = 10.0;

  void validate() const;
};

struct FewShotSample {
  std::string scene_label;
  RowVector scene_feature;
  PatchFeatureMap patches;
  PixelDepthMap gt;
};

/// Everything that stays fixed during training.
struct FrozenModel {
  ReferenceTextEncoder encoder;
  CategoryTokenSet categories;
  SceneFeatureBank scenes;
};

struct TrainState {
  PromptContext prompt;
  DepthCodebook codebook;
  int epoch = 0;
  std::vector<double> loss_history;  // mean step loss per completed epoch
};

/// Random prompt context of `context_length` rows and a codebook with one
/// copy of `init_bin` per bank scene.
TrainState init_state(const FrozenModel& frozen, Eigen::Index context_length, const RowVector& init_bin,
                      std::uint64_t seed);

/// sqrt of the mean squared error over pixels with a nonzero mask.
double rmse_loss(const PixelDepthMap& pred, const PixelDepthMap& gt, const Matrix& mask);

/// One recorded forward pass from parameters to loss.
struct ForwardPass {
  Tape tape;
  Var context;
  Var codebook;
  Var pixels;
  Var loss;
  std::size_t scene = 0;
};

inline constexpr const char* kContextLeaf = "prompt_V";
inline constexpr const char* kCodebookLeaf = "codebook_theta";

ForwardPass record_forward(const TrainState& state, const FewShotSample& sample, const FrozenModel& frozen,
                           double tau);

struct StepResult {
  double loss = 0.0;
  std::size_t scene = 0;
};

/// Forward, backward and one SGD update of the context and the selected codebook row.
StepResult train_step(TrainState& state, const FewShotSample& sample, const FrozenModel& frozen,
                      const TrainConfig& config);

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// `config.epochs` passes over the samples in a per-epoch shuffled order
/// drawn from Rng(config.seed).
TrainState fit(const std::vector<FewShotSample>& samples, const FrozenModel& frozen, const TrainConfig& config,
               TrainState state, const EpochCallback& on_epoch = {});

/// Mean loss over `samples` for fixed parameters.
double mean_loss(const TrainState& state, const std::vector<FewShotSample>& samples, const FrozenModel& frozen,
                 double tau);

/// Collapses the scene bank to one row (the mean scene feature) labelled
/// "all", and relabels the samples accordingly. Used for the single
/// class-independent bin comparison.
void collapse_to_single_scene(std::vector<FewShotSample>& samples, FrozenModel& frozen);

struct GradCheckReport {
  double max_rel_error_prompt = 0.0;
  double max_rel_error_codebook = 0.0;
  std::size_t entries_checked = 0;

  double max_rel_error() const { return std::max(max_rel_error_prompt, max_rel_error_codebook); }
};

/// Compares the tape gradients of the training loss with central finite
/// differences (step `h`) on a randomly drawn 2-scene, 4-category, 2x2-patch
/// instance. Relative error per entry is |a - n| / max(|a|, 1e-8).
GradCheckReport gradient_check(std::uint64_t seed, double h = 1e-3);

}  // namespace fsdepth
