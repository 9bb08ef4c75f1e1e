#include "fsdepth/metrics.hpp"

#include <cstdio>
#include <ostream>

namespace fsdepth {

MetricReport compute_metrics(const PixelDepthMap& pred, const PixelDepthMap& gt, LogBase base) {
  if (pred.depth.rows() != gt.depth.rows() || pred.depth.cols() != gt.depth.cols()) {
    throw DimensionError("compute_metrics: prediction " + shape_str(pred.depth) + " vs ground truth " +
                         shape_str(gt.depth));
  }
  return compute_metrics(pred.depth, gt.depth, valid_mask(gt), base);
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ValidationError("aggregate_reports: no reports");
  if (reports.size() == 1) return reports.front();
  double n = 0, mare = 0, msre = 0, aels = 0, sq = 0, d1 = 0, d2 = 0, d3 = 0;
  std::size_t total = 0;
  for (const auto& r : reports) {
    const double w = static_cast<double>(r.n_pixels);
    n += w;
    mare += w * r.mare;
    msre += w * r.msre;
    aels += w * r.aels;
    sq += w * r.rmse * r.rmse;
    d1 += w * r.delta1;
    d2 += w * r.delta2;
    d3 += w * r.delta3;
    total += r.n_pixels;
  }
  if (total == 0) throw ValidationError("aggregate_reports: reports cover no pixels");
  MetricReport out;
  out.mare = mare / n;
  out.msre = msre / n;
  out.aels = aels / n;
  out.rmse = std::sqrt(sq / n);
  out.delta1 = d1 / n;
  out.delta2 = d2 / n;
  out.delta3 = d3 / n;
  out.n_pixels = total;
  return out;
}

std::vector<MetricReport> random_baseline_reports(const std::vector<PixelDepthMap>& gts, double lo, double hi,
                                                  std::uint64_t seed) {
  if (!(lo >= 0.0) || !(hi > lo)) {
    throw ValidationError("random_baseline: invalid depth range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  const double floor = std::max(lo, 1e-3);
  if (!(hi > floor)) throw ValidationError("random_baseline: range upper bound must exceed 1e-3");
  Rng rng(seed);
  std::vector<MetricReport> reports;
  for (const auto& gt : gts) {
    PixelDepthMap pred{Matrix(gt.height(), gt.width())};
    for (Eigen::Index i = 0; i < pred.depth.size(); ++i) pred.depth.data()[i] = rng.uniform(floor, hi);
    reports.push_back(compute_metrics(pred, gt));
  }
  return reports;
}

MetricReport random_baseline(const std::vector<PixelDepthMap>& gts, double lo, double hi, std::uint64_t seed) {
  return aggregate_reports(random_baseline_reports(gts, lo, hi, seed));
}

std::string format_report_row(const std::string& image_id, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), ",%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", r.n_pixels, r.delta1, r.delta2,
                r.delta3, r.mare, r.msre, r.aels, r.rmse);
  return image_id + buf;
}

void write_report_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  out << kReportHeader << '\n';
  for (const auto& [id, report] : rows) out << format_report_row(id, report) << '\n';
}

}  // namespace fsdepth
