#include <gtest/gtest.h>

#include <sstream>

#include "fsdepth/metrics.hpp"
#include "oracles.hpp"

using namespace fsdepth;

namespace {

PixelDepthMap map1(double v) { return PixelDepthMap{Matrix::Constant(1, 1, v)}; }

void expect_same(const MetricReport& a, const MetricReport& b, double tol) {
  EXPECT_NEAR(a.mare, b.mare, tol);
  EXPECT_NEAR(a.msre, b.msre, tol);
  EXPECT_NEAR(a.aels, b.aels, tol);
  EXPECT_NEAR(a.rmse, b.rmse, tol);
  EXPECT_NEAR(a.delta1, b.delta1, tol);
  EXPECT_NEAR(a.delta2, b.delta2, tol);
  EXPECT_NEAR(a.delta3, b.delta3, tol);
  EXPECT_EQ(a.n_pixels, b.n_pixels);
}

}  // namespace

TEST(Metrics, PerfectPrediction) {
  Rng rng(1);
  const PixelDepthMap gt{rng.uniform_matrix(4, 5, 0.5, 8.0)};
  const MetricReport r = compute_metrics(gt, gt);
  EXPECT_EQ(r.mare, 0.0);
  EXPECT_EQ(r.msre, 0.0);
  EXPECT_EQ(r.aels, 0.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.delta1, 1.0);
  EXPECT_EQ(r.delta2, 1.0);
  EXPECT_EQ(r.delta3, 1.0);
  EXPECT_EQ(r.n_pixels, 20u);
}

TEST(Metrics, HalfDepth) {
  const MetricReport r = compute_metrics(map1(1.0), map1(2.0));
  EXPECT_DOUBLE_EQ(r.mare, 0.5);
  EXPECT_DOUBLE_EQ(r.msre, 0.5);
  EXPECT_NEAR(r.aels, 0.6931471805599453, 1e-15);
  EXPECT_DOUBLE_EQ(r.rmse, 1.0);
  // 1.25^3 = 1.953125 < 2, so no threshold is met
  EXPECT_EQ(r.delta1, 0.0);
  EXPECT_EQ(r.delta2, 0.0);
  EXPECT_EQ(r.delta3, 0.0);
}

TEST(Metrics, SubThresholdRatio) {
  const MetricReport r = compute_metrics(map1(2.4), map1(2.0));
  EXPECT_EQ(r.delta1, 1.0);
  EXPECT_EQ(r.delta2, 1.0);
  EXPECT_EQ(r.delta3, 1.0);
}

TEST(Metrics, ThresholdIsStrict) {
  const MetricReport r = compute_metrics(map1(2.5), map1(2.0));
  EXPECT_EQ(r.delta1, 0.0);
  EXPECT_EQ(r.delta2, 1.0);
}

TEST(Metrics, Log10Option) {
  const MetricReport r = compute_metrics(map1(1.0), map1(10.0), LogBase::kBase10);
  EXPECT_NEAR(r.aels, 1.0, 1e-15);
}

TEST(Metrics, InvalidGroundTruthSkipped) {
  PixelDepthMap gt{Matrix(1, 3)};
  gt.depth << 2, 0, -1;
  PixelDepthMap pred{Matrix(1, 3)};
  pred.depth << 2, 5, 5;
  const MetricReport r = compute_metrics(pred, gt);
  EXPECT_EQ(r.n_pixels, 1u);
  EXPECT_EQ(r.rmse, 0.0);
}

TEST(Metrics, NonpositivePredictionNamesPixel) {
  PixelDepthMap gt{Matrix::Ones(2, 2)};
  PixelDepthMap pred{Matrix::Ones(2, 2)};
  pred.depth(1, 0) = 0.0;
  try {
    compute_metrics(pred, gt);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("(1, 0)"), std::string::npos) << e.what();
  }
}

TEST(Metrics, EmptyMaskAndShapeMismatch) {
  EXPECT_THROW(compute_metrics(map1(1.0), map1(0.0)), ValidationError);
  EXPECT_THROW(compute_metrics(PixelDepthMap{Matrix::Ones(2, 2)}, map1(1.0)), DimensionError);
}

TEST(Metrics, MatchesLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index h = 1 + rng.below(10), w = 1 + rng.below(10);
    PixelDepthMap gt{rng.uniform_matrix(h, w, 0.1, 10.0)};
    const PixelDepthMap pred{rng.uniform_matrix(h, w, 0.1, 10.0)};
    for (Eigen::Index i = 0; i < gt.depth.size(); ++i) {
      if (rng.uniform01() < 0.1) gt.depth.data()[i] = 0.0;
    }
    gt.depth(0, 0) = 1.0;
    const MetricReport r = compute_metrics(pred, gt);
    const oracle::Metrics o = oracle::metrics(oracle::to_grid(pred.depth), oracle::to_grid(gt.depth));
    ASSERT_EQ(r.n_pixels, o.n);
    ASSERT_NEAR(r.mare, o.mare, 1e-9);
    ASSERT_NEAR(r.msre, o.msre, 1e-9);
    ASSERT_NEAR(r.aels, o.aels, 1e-9);
    ASSERT_NEAR(r.rmse, o.rmse, 1e-9);
    ASSERT_NEAR(r.delta1, o.d1, 1e-9);
    ASSERT_NEAR(r.delta2, o.d2, 1e-9);
    ASSERT_NEAR(r.delta3, o.d3, 1e-9);
  }
}

TEST(Aggregate, SingleAndIdentical) {
  Rng rng(4);
  const MetricReport r =
      compute_metrics(PixelDepthMap{rng.uniform_matrix(3, 3, 1, 4)}, PixelDepthMap{rng.uniform_matrix(3, 3, 1, 4)});
  expect_same(aggregate_reports({r}), r, 1e-15);
  const MetricReport twice = aggregate_reports({r, r});
  EXPECT_NEAR(twice.mare, r.mare, 1e-15);
  EXPECT_NEAR(twice.rmse, r.rmse, 1e-15);
  EXPECT_EQ(twice.n_pixels, 2 * r.n_pixels);
  EXPECT_THROW(aggregate_reports({}), ValidationError);
}

TEST(Aggregate, DisjointHalvesEqualWhole) {
  Rng rng(5);
  const PixelDepthMap gt{rng.uniform_matrix(6, 7, 0.5, 6)};
  const PixelDepthMap pred{rng.uniform_matrix(6, 7, 0.5, 6)};
  const MetricReport whole = compute_metrics(pred, gt);
  const PixelDepthMap top_gt{gt.depth.topRows(2)}, top_pred{pred.depth.topRows(2)};
  const PixelDepthMap bot_gt{gt.depth.bottomRows(4)}, bot_pred{pred.depth.bottomRows(4)};
  const MetricReport agg = aggregate_reports({compute_metrics(top_pred, top_gt), compute_metrics(bot_pred, bot_gt)});
  expect_same(agg, whole, 1e-12);
}

TEST(RandomBaseline, SanityAndDeterminism) {
  Rng rng(6);
  std::vector<PixelDepthMap> gts;
  for (int i = 0; i < 3; ++i) gts.push_back(PixelDepthMap{rng.uniform_matrix(10, 10, 0.5, 10.0)});
  const MetricReport a = random_baseline(gts, 0.5, 10.0, 42);
  const MetricReport b = random_baseline(gts, 0.5, 10.0, 42);
  EXPECT_GT(a.delta1, 0.0);
  EXPECT_LT(a.delta1, 1.0);
  EXPECT_GT(a.delta3, 0.0);
  EXPECT_LT(a.delta3, 1.0);
  EXPECT_EQ(a.mare, b.mare);
  EXPECT_EQ(a.rmse, b.rmse);
  EXPECT_EQ(a.delta2, b.delta2);
  EXPECT_NE(random_baseline(gts, 0.5, 10.0, 43).mare, a.mare);
  EXPECT_THROW(random_baseline(gts, 5.0, 1.0, 1), ValidationError);
}

TEST(ReportCsv, HeaderAndRows) {
  std::ostringstream out;
  MetricReport r;
  r.n_pixels = 4;
  r.mare = 0.5;
  r.delta1 = 1;
  write_report_csv(out, {{"img0", r}});
  EXPECT_EQ(out.str(),
            "image_id,n_pixels,delta1,delta2,delta3,mare,msre,aels,rmse\n"
            "img0,4,1,0,0,0.5,0,0,0\n");
}
