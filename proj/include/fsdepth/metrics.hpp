#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fsdepth/depthhead.hpp"
#include "fsdepth/errors.hpp"
#include "fsdepth/types.hpp"

namespace fsdepth {

enum class LogBase { kNatural, kBase10 };

/// Error and accuracy metrics over the masked pixels of one or more images.
///
///   mare  = mean |d - p| / d
///   msre  = mean (d - p)^2 / d
///   aels  = mean |log d - log p|
///   rmse  = sqrt(mean (d - p)^2)
///   delta_k = fraction with max(d/p, p/d) < 1.25^k
struct MetricReport {
  double mare = 0.0;
  double msre = 0.0;
  double aels = 0.0;
  double rmse = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t n_pixels = 0;
};

inline constexpr double kDeltaBase = 1.25;

/// Metrics over pixels where `mask` is nonzero. Throws ValidationError when a
/// masked pixel has a nonpositive ground truth or prediction, or when the
/// mask is empty.
template <typename PredDerived, typename GtDerived, typename MaskDerived>
MetricReport compute_metrics(const Eigen::MatrixBase<PredDerived>& pred, const Eigen::MatrixBase<GtDerived>& gt,
                             const Eigen::MatrixBase<MaskDerived>& mask, LogBase base = LogBase::kNatural) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || mask.rows() != gt.rows() ||
      mask.cols() != gt.cols()) {
    throw DimensionError("compute_metrics: prediction " + shape_str(pred) + ", ground truth " + shape_str(gt) +
                         ", mask " + shape_str(mask));
  }
  const double t1 = kDeltaBase, t2 = t1 * t1, t3 = t2 * t1;
  double abs_rel = 0, sq_rel = 0, log_err = 0, sq = 0;
  std::size_t n = 0, c1 = 0, c2 = 0, c3 = 0;
  for (Eigen::Index y = 0; y < gt.rows(); ++y) {
    for (Eigen::Index x = 0; x < gt.cols(); ++x) {
      if (mask(y, x) == 0) continue;
      const double d = static_cast<double>(gt(y, x));
      const double p = static_cast<double>(pred(y, x));
      if (!(d > 0.0) || !(p > 0.0) || !std::isfinite(d) || !std::isfinite(p)) {
        throw ValidationError("compute_metrics: nonpositive depth at pixel (" + std::to_string(y) + ", " +
                              std::to_string(x) + "): gt " + std::to_string(d) + ", pred " + std::to_string(p));
      }
      const double e = d - p;
      abs_rel += std::abs(e) / d;
      sq_rel += e * e / d;
      log_err += base == LogBase::kNatural ? std::abs(std::log(d) - std::log(p))
                                           : std::abs(std::log10(d) - std::log10(p));
      sq += e * e;
      const double ratio = std::max(d / p, p / d);
      c1 += ratio < t1;
      c2 += ratio < t2;
      c3 += ratio < t3;
      ++n;
    }
  }
  if (n == 0) throw ValidationError("compute_metrics: mask selects no pixels");
  const double dn = static_cast<double>(n);
  MetricReport r;
  r.mare = abs_rel / dn;
  r.msre = sq_rel / dn;
  r.aels = log_err / dn;
  r.rmse = std::sqrt(sq / dn);
  r.delta1 = static_cast<double>(c1) / dn;
  r.delta2 = static_cast<double>(c2) / dn;
  r.delta3 = static_cast<double>(c3) / dn;
  r.n_pixels = n;
  return r;
}

/// Masks pixels with gt > 0.
MetricReport compute_metrics(const PixelDepthMap& pred, const PixelDepthMap& gt, LogBase base = LogBase::kNatural);

/// Pixel-weighted pooling: same result as computing over the union of all
/// masked pixels (rmse pools squared errors before the root).
MetricReport aggregate_reports(const std::vector<MetricReport>& reports);

/// Per-image reports for predictions drawn uniformly from [max(lo, 1e-3), hi]
/// at every pixel, images in order, pixels row-major, from Rng(seed).
std::vector<MetricReport> random_baseline_reports(const std::vector<PixelDepthMap>& gts, double lo, double hi,
                                                  std::uint64_t seed);

MetricReport random_baseline(const std::vector<PixelDepthMap>& gts, double lo, double hi, std::uint64_t seed);

inline constexpr const char* kReportHeader = "image_id,n_pixels,delta1,delta2,delta3,mare,msre,aels,rmse";

std::string format_report_row(const std::string& image_id, const MetricReport& r);

/// Header line followed by one row per entry.
void write_report_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace fsdepth
