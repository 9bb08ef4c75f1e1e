#include <gtest/gtest.h>

#include "fsdepth/synth.hpp"
#include "fsdepth/trainer.hpp"
#include "oracles.hpp"

using namespace fsdepth;

namespace {

RowVector bin_of(const SynthDataset& d) {
  return Eigen::Map<const RowVector>(d.config.init_bin.data(), static_cast<Eigen::Index>(d.config.init_bin.size()));
}

SynthDataset fixture(std::uint64_t seed, int scenes = 3) {
  SynthOptions opt;
  opt.seed = seed;
  opt.scenes = scenes;
  return make_synthetic_dataset(opt);
}

}  // namespace

TEST(RmseLoss, Examples) {
  PixelDepthMap gt{Matrix(1, 2)};
  gt.depth << 3, 4;
  const Matrix mask = Matrix::Ones(1, 2);
  EXPECT_EQ(rmse_loss(gt, gt, mask), 0.0);

  PixelDepthMap shifted{(gt.depth.array() - 0.75).matrix()};
  EXPECT_NEAR(rmse_loss(shifted, gt, mask), 0.75, 1e-15);

  PixelDepthMap zero{Matrix::Zero(1, 2)};
  EXPECT_NEAR(rmse_loss(zero, gt, mask), std::sqrt(12.5), 1e-12);
  EXPECT_NEAR(rmse_loss(zero, gt, mask), 3.5355339, 1e-7);
}

TEST(RmseLoss, MaskedPixelsIgnoredAndEmptyMaskRejected) {
  PixelDepthMap gt{Matrix(1, 3)};
  gt.depth << 2, 0, 5;
  PixelDepthMap pred{Matrix(1, 3)};
  pred.depth << 2, 100, 5;
  EXPECT_EQ(rmse_loss(pred, gt, valid_mask(gt)), 0.0);
  EXPECT_THROW(rmse_loss(pred, gt, Matrix::Zero(1, 3)), ValidationError);
  EXPECT_THROW(rmse_loss(PixelDepthMap{Matrix::Ones(2, 2)}, gt, valid_mask(gt)), DimensionError);
}

TEST(TrainStep, ZeroGradientOnlyShrinksContext) {
  SynthDataset d = fixture(1, 2);
  TrainState state = init_state(d.frozen, 3, bin_of(d), 0);
  FewShotSample s = d.train[0];
  const TextFeatureBank text = build_text_bank(state.prompt, d.frozen.categories, d.frozen.encoder);
  s.gt = predict(text, s.patches, select(s.scene_feature, d.frozen.scenes, state.codebook), d.config.train.tau);

  const TrainState before = state;
  const StepResult r = train_step(state, s, d.frozen, d.config.train);
  EXPECT_LT(r.loss, 1e-12);
  const TrainConfig& c = d.config.train;
  EXPECT_EQ(state.prompt.vectors, (before.prompt.vectors - c.lr_prompt * (c.weight_decay * before.prompt.vectors)).eval());
  EXPECT_EQ(state.codebook.theta, before.codebook.theta);
}

TEST(TrainStep, SmallStepDecreasesSampleLoss) {
  SynthDataset d = fixture(2);
  TrainConfig c = d.config.train;
  c.lr_prompt /= 100.0;
  c.lr_codebook /= 100.0;
  for (const auto& s : d.train) {
    TrainState state = init_state(d.frozen, 3, bin_of(d), 0);
    const std::vector<FewShotSample> one{s};
    const double before = mean_loss(state, one, d.frozen, c.tau);
    train_step(state, s, d.frozen, c);
    EXPECT_LT(mean_loss(state, one, d.frozen, c.tau), before) << s.scene_label;
  }
}

TEST(TrainStep, TrainingSampleSelectsItsOwnScene) {
  SynthDataset d = fixture(3);
  for (std::size_t j = 0; j < d.train.size(); ++j) {
    const Vector sim = scene_similarity(d.train[j].scene_feature, d.frozen.scenes);
    EXPECT_NEAR(sim(static_cast<Eigen::Index>(j)), 1.0, 1e-12);
    EXPECT_EQ(select_scene(sim), j);
  }
}

TEST(TrainStep, NonFiniteIsReportedWithEpochAndSample) {
  SynthDataset d = fixture(4, 2);
  TrainConfig c = d.config.train;
  c.lr_prompt = 1e300;
  c.epochs = 3;
  try {
    fit(d.train, d.frozen, c, init_state(d.frozen, 3, bin_of(d), 0));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("sample"), std::string::npos) << msg;
  }
}

TEST(Fit, ZeroRateKeepsInitialization) {
  SynthDataset d = fixture(5);
  TrainConfig c = d.config.train;
  c.epochs = 1;
  c.lr_prompt = 0.0;
  c.lr_codebook = 0.0;
  const TrainState init = init_state(d.frozen, 3, bin_of(d), 0);
  const TrainState out = fit(d.train, d.frozen, c, init);
  EXPECT_EQ(out.prompt.vectors, init.prompt.vectors);
  EXPECT_EQ(out.codebook.theta, init.codebook.theta);
  EXPECT_EQ(out.epoch, 1);
}

TEST(Fit, SameSeedIsBitIdentical) {
  SynthDataset d = fixture(6);
  TrainConfig c = d.config.train;
  c.epochs = 20;
  const TrainState init = init_state(d.frozen, 3, bin_of(d), 0);
  const TrainState a = fit(d.train, d.frozen, c, init);
  const TrainState b = fit(d.train, d.frozen, c, init);
  EXPECT_EQ(a.prompt.vectors, b.prompt.vectors);
  EXPECT_EQ(a.codebook.theta, b.codebook.theta);
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Fit, SyntheticFixtureAdapts) {
  SynthDataset d = fixture(7);
  const TrainState init = init_state(d.frozen, 3, bin_of(d), 0);
  const double initial = mean_loss(init, d.train, d.frozen, d.config.train.tau);
  const TrainState out = fit(d.train, d.frozen, d.config.train, init);
  EXPECT_LE(mean_loss(out, d.train, d.frozen, d.config.train.tau), 0.5 * initial);
  double spread = 0.0;
  for (Eigen::Index a = 0; a < 3; ++a) {
    for (Eigen::Index b = a + 1; b < 3; ++b) {
      spread = std::max(spread, (out.codebook.theta.row(a) - out.codebook.theta.row(b)).cwiseAbs().maxCoeff());
    }
  }
  EXPECT_GT(spread, 0.05);
  EXPECT_EQ(out.loss_history.size(), 200u);
}

TEST(Fit, LabelNotInBank) {
  SynthDataset d = fixture(8, 2);
  d.train[1].scene_label = "elsewhere";
  EXPECT_THROW(fit(d.train, d.frozen, d.config.train, init_state(d.frozen, 3, bin_of(d), 0)), ValidationError);
}

TEST(Fit, CodebookBankMismatch) {
  SynthDataset d = fixture(8, 2);
  TrainState state = init_state(d.frozen, 3, bin_of(d), 0);
  state.codebook = init_codebook(3, bin_of(d));
  EXPECT_THROW(fit(d.train, d.frozen, d.config.train, state), ValidationError);
}

TEST(Fit, CollapsedBankHasOneRow) {
  SynthDataset d = fixture(9);
  collapse_to_single_scene(d.train, d.frozen);
  EXPECT_EQ(d.frozen.scenes.size(), 1);
  for (const auto& s : d.train) EXPECT_EQ(s.scene_label, "all");
  const TrainState state = init_state(d.frozen, 3, bin_of(d), 0);
  EXPECT_EQ(state.codebook.scenes(), 1);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.lr_prompt = -1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.tau = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Gradient, UnselectedCodebookRowsGetZero) {
  SynthDataset d = fixture(10);
  const TrainState state = init_state(d.frozen, 3, bin_of(d), 0);
  ForwardPass fp = record_forward(state, d.train[1], d.frozen, d.config.train.tau);
  const Matrix g = fp.tape.backward(fp.loss).at(kCodebookLeaf);
  EXPECT_EQ(fp.scene, 1u);
  EXPECT_TRUE(g.row(0).isZero(0.0));
  EXPECT_TRUE(g.row(2).isZero(0.0));
  EXPECT_FALSE(g.row(1).isZero(0.0));
}

TEST(Gradient, FullPipelineMatchesFiniteDifferences) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const GradCheckReport r = gradient_check(seed);
    EXPECT_LE(r.max_rel_error(), 1e-4) << seed;
    EXPECT_EQ(r.entries_checked, 16u);
  }
}

TEST(Gradient, TrainerGradientMatchesIndependentLoss) {
  // The loss is recomputed with the plain-loop oracle rather than the tape.
  SynthOptions opt;
  opt.scenes = 2;
  opt.src_h = 9;
  opt.src_w = 9;
  opt.stride = 4;
  opt.seed = 11;
  RunConfig cfg;
  cfg.dims = EncoderDims{5, 7, 6};
  const SynthDataset d = make_synthetic_dataset(opt, cfg);
  const TrainState state = init_state(d.frozen, 2, bin_of(d), 3);
  const FewShotSample& s = d.train[0];
  ForwardPass fp = record_forward(state, s, d.frozen, kDefaultTau);
  const Matrix g = fp.tape.backward(fp.loss).at(kContextLeaf);

  const auto w1 = oracle::to_grid(d.frozen.encoder.w1), w2 = oracle::to_grid(d.frozen.encoder.w2);
  const auto tok = oracle::to_grid(d.frozen.categories.tokens);
  const auto patches = oracle::to_grid(s.patches.features);
  std::vector<double> bin(state.codebook.theta.row(0).data(), state.codebook.theta.row(0).data() + 7);
  const auto loss = [&](const Matrix& v) {
    const auto pred = oracle::predict(oracle::text_bank(oracle::to_grid(v), tok, w1, w2), patches, s.patches.grid_w,
                                      s.patches.src_h, s.patches.src_w, s.patches.stride, bin, kDefaultTau);
    double sq = 0;
    long n = 0;
    for (Eigen::Index y = 0; y < s.gt.height(); ++y) {
      for (Eigen::Index x = 0; x < s.gt.width(); ++x) {
        if (s.gt.depth(y, x) <= 0) continue;
        sq += (pred[y][x] - s.gt.depth(y, x)) * (pred[y][x] - s.gt.depth(y, x));
        ++n;
      }
    }
    return std::sqrt(sq / n);
  };
  EXPECT_NEAR(fp.tape.value(fp.loss)(0, 0), loss(state.prompt.vectors), 1e-12);
  EXPECT_LE(oracle::max_rel_error(g, oracle::numeric_gradient(loss, state.prompt.vectors, 1e-5), 1e-6), 1e-4);
}
