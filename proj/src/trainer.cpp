#include "fsdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsdepth/errors.hpp"

namespace fsdepth {

namespace {

Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

void validate_sample(const FewShotSample& s, const FrozenModel& frozen) {
  s.patches.validate();
  if (s.gt.height() != s.patches.src_h || s.gt.width() != s.patches.src_w) {
    throw ValidationError("sample '" + s.scene_label + "': ground truth " + shape_str(s.gt.depth) +
                          " does not match source " + shape_str(s.patches.src_h, s.patches.src_w));
  }
  if (s.scene_feature.size() != frozen.scenes.width()) {
    throw DimensionError("sample '" + s.scene_label + "': scene feature width " +
                         std::to_string(s.scene_feature.size()) + " != bank width " +
                         std::to_string(frozen.scenes.width()));
  }
  if (!s.gt.depth.allFinite()) throw ValidationError("sample '" + s.scene_label + "': non-finite ground truth");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_prompt >= 0.0) || !(lr_codebook >= 0.0)) throw ValidationError("learning rates must be >= 0");
  if (!(weight_decay >= 0.0) || !(codebook_weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1, got " + std::to_string(epochs));
  if (!(tau > 0.0)) throw ValidationError("tau must be positive");
  if (!(max_depth > kMinCodebookDepth)) throw ValidationError("max_depth must exceed " + std::to_string(kMinCodebookDepth));
}

TrainState init_state(const FrozenModel& frozen, Eigen::Index context_length, const RowVector& init_bin,
                      std::uint64_t seed) {
  if (init_bin.size() != frozen.categories.size()) {
    throw DimensionError("init_state: initial bin has " + std::to_string(init_bin.size()) + " entries for " +
                         std::to_string(frozen.categories.size()) + " categories");
  }
  TrainState state;
  state.prompt = PromptContext::random(context_length, frozen.categories.token_width(), seed);
  state.codebook = init_codebook(frozen.scenes.size(), init_bin);
  return state;
}

double rmse_loss(const PixelDepthMap& pred, const PixelDepthMap& gt, const Matrix& mask) {
  if (pred.depth.rows() != gt.depth.rows() || pred.depth.cols() != gt.depth.cols() ||
      mask.rows() != gt.depth.rows() || mask.cols() != gt.depth.cols()) {
    throw DimensionError("rmse_loss: prediction " + shape_str(pred.depth) + ", ground truth " +
                         shape_str(gt.depth) + ", mask " + shape_str(mask));
  }
  double sum = 0.0;
  double count = 0.0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] == 0.0) continue;
    const double e = pred.depth.data()[i] - gt.depth.data()[i];
    sum += e * e;
    count += 1.0;
  }
  if (count == 0.0) throw ValidationError("rmse_loss: mask selects no pixels");
  return std::sqrt(sum / count);
}

ForwardPass record_forward(const TrainState& state, const FewShotSample& sample, const FrozenModel& frozen,
                           double tau) {
  ForwardPass fp;
  Tape& tape = fp.tape;
  fp.context = tape.leaf(kContextLeaf, state.prompt.vectors);
  fp.codebook = tape.leaf(kCodebookLeaf, state.codebook.theta);

  fp.scene = select_scene(scene_similarity(sample.scene_feature, frozen.scenes));
  Matrix one_hot = Matrix::Zero(1, state.codebook.scenes());
  one_hot(0, static_cast<Eigen::Index>(fp.scene)) = 1.0;
  Var bin = tape.matmul(tape.constant(one_hot), fp.codebook);

  Var bank = record_text_bank(tape, fp.context, frozen.categories, frozen.encoder);
  fp.pixels = record_pixel_depth(tape, bank, sample.patches, bin, tau);
  fp.loss = tape.masked_rmse(fp.pixels, flatten(sample.gt.depth), flatten(valid_mask(sample.gt)));
  return fp;
}

StepResult train_step(TrainState& state, const FewShotSample& sample, const FrozenModel& frozen,
                      const TrainConfig& config) {
  ForwardPass fp = record_forward(state, sample, frozen, config.tau);
  const double loss = fp.tape.value(fp.loss)(0, 0);
  if (!std::isfinite(loss)) throw TrainingError("non-finite loss");
  const GradientSet grads = fp.tape.backward(fp.loss);
  const Matrix& g_context = grads.at(kContextLeaf);
  const Matrix& g_codebook = grads.at(kCodebookLeaf);

  state.prompt.vectors -= config.lr_prompt * (g_context + config.weight_decay * state.prompt.vectors);

  const auto j = static_cast<Eigen::Index>(fp.scene);
  auto row = state.codebook.theta.row(j);
  row -= config.lr_codebook * (g_codebook.row(j) + config.codebook_weight_decay * row);
  row = row.cwiseMax(kMinCodebookDepth).cwiseMin(config.max_depth);

  if (!state.prompt.vectors.allFinite() || !state.codebook.theta.allFinite()) {
    throw TrainingError("non-finite parameters after update");
  }
  return StepResult{loss, fp.scene};
}

TrainState fit(const std::vector<FewShotSample>& samples, const FrozenModel& frozen, const TrainConfig& config,
               TrainState state, const EpochCallback& on_epoch) {
  config.validate();
  if (samples.empty()) throw ValidationError("fit: no training samples");
  frozen.scenes.validate();
  frozen.categories.validate();
  if (state.codebook.scenes() != frozen.scenes.size()) {
    throw ValidationError("fit: codebook has " + std::to_string(state.codebook.scenes()) + " rows but the scene bank has " +
                          std::to_string(frozen.scenes.size()) + " scenes");
  }
  if (state.codebook.categories() != frozen.categories.size()) {
    throw ValidationError("fit: codebook has " + std::to_string(state.codebook.categories()) + " columns for " +
                          std::to_string(frozen.categories.size()) + " categories");
  }
  state.codebook.validate(config.max_depth);
  for (const auto& s : samples) {
    if (std::find(frozen.scenes.labels.begin(), frozen.scenes.labels.end(), s.scene_label) == frozen.scenes.labels.end()) {
      throw ValidationError("fit: sample label '" + s.scene_label + "' is not in the scene bank");
    }
    validate_sample(s, frozen);
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  for (int e = 0; e < config.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double total = 0.0;
    for (std::size_t idx : order) {
      try {
        total += train_step(state, samples[idx], frozen, config).loss;
      } catch (const TrainingError& err) {
        throw TrainingError("epoch " + std::to_string(state.epoch + 1) + ", sample " + std::to_string(idx) + " ('" +
                            samples[idx].scene_label + "'): " + err.what());
      }
    }
    state.epoch += 1;
    state.loss_history.push_back(total / static_cast<double>(samples.size()));
    if (on_epoch) on_epoch(state.epoch, state.loss_history.back());
  }
  return state;
}

double mean_loss(const TrainState& state, const std::vector<FewShotSample>& samples, const FrozenModel& frozen,
                 double tau) {
  if (samples.empty()) throw ValidationError("mean_loss: no samples");
  const TextFeatureBank bank = build_text_bank(state.prompt, frozen.categories, frozen.encoder);
  double total = 0.0;
  for (const auto& s : samples) {
    const SceneSelection sel = select(s.scene_feature, frozen.scenes, state.codebook);
    const PixelDepthMap pred = predict(bank, s.patches, sel, tau);
    total += rmse_loss(pred, s.gt, valid_mask(s.gt));
  }
  return total / static_cast<double>(samples.size());
}

void collapse_to_single_scene(std::vector<FewShotSample>& samples, FrozenModel& frozen) {
  frozen.scenes.validate();
  const RowVector mean = frozen.scenes.features.colwise().mean();
  frozen.scenes = SceneFeatureBank{{"all"}, mean};
  for (auto& s : samples) s.scene_label = "all";
}

GradCheckReport gradient_check(std::uint64_t seed, double h) {
  constexpr Eigen::Index kCategories = 4;
  Rng rng(seed);

  FrozenModel frozen;
  frozen.encoder = ReferenceTextEncoder::make(rng.next_u64(), EncoderDims{6, 8, 5});
  std::vector<std::string> labels;
  for (Eigen::Index k = 0; k < kCategories; ++k) labels.push_back("c" + std::to_string(k));
  frozen.categories = CategoryTokenSet::generate(labels, 6, rng.next_u64());
  frozen.scenes = SceneFeatureBank{{"s0", "s1"}, rng.normal_matrix(2, 5)};

  TrainState state;
  state.prompt = PromptContext{rng.uniform_matrix(2, 6, -0.5, 0.5)};
  state.codebook = DepthCodebook{rng.uniform_matrix(2, kCategories, 1.0, 4.0)};

  FewShotSample sample;
  const auto scene = static_cast<Eigen::Index>(rng.below(2));
  sample.scene_label = frozen.scenes.labels[static_cast<std::size_t>(scene)];
  sample.scene_feature = frozen.scenes.features.row(scene) + rng.normal_matrix(1, 5, 0.05);
  sample.patches = PatchFeatureMap{2, 2, rng.normal_matrix(4, 5), 4, 4, 2};
  sample.gt = PixelDepthMap{rng.uniform_matrix(4, 4, 0.5, 5.0)};
  sample.gt.depth(rng.below(4), rng.below(4)) = 0.0;

  const double tau = kDefaultTau;
  ForwardPass fp = record_forward(state, sample, frozen, tau);
  const GradientSet grads = fp.tape.backward(fp.loss);

  auto loss_at = [&](const TrainState& s) {
    ForwardPass p = record_forward(s, sample, frozen, tau);
    return p.tape.value(p.loss)(0, 0);
  };
  auto rel = [](double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
  };

  GradCheckReport report;
  const Matrix& gv = grads.at(kContextLeaf);
  for (Eigen::Index i = 0; i < state.prompt.vectors.size(); ++i) {
    TrainState plus = state, minus = state;
    plus.prompt.vectors.data()[i] += h;
    minus.prompt.vectors.data()[i] -= h;
    const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
    report.max_rel_error_prompt = std::max(report.max_rel_error_prompt, rel(gv.data()[i], numeric));
    ++report.entries_checked;
  }
  const Matrix& gt = grads.at(kCodebookLeaf);
  const auto j = static_cast<Eigen::Index>(fp.scene);
  for (Eigen::Index k = 0; k < kCategories; ++k) {
    TrainState plus = state, minus = state;
    plus.codebook.theta(j, k) += h;
    minus.codebook.theta(j, k) -= h;
    const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
    report.max_rel_error_codebook = std::max(report.max_rel_error_codebook, rel(gt(j, k), numeric));
    ++report.entries_checked;
  }
  return report;
}

}  // namespace fsdepth
