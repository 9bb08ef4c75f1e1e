#include "fsdepth/scenepath.hpp"

#include <algorithm>
#include <set>

#include "fsdepth/errors.hpp"

namespace fsdepth {

const std::vector<double>& default_depth_bin() {
  static const std::vector<double> bin = {1.00, 1.50, 2.00, 2.25, 2.50, 2.75, 3.00};
  return bin;
}

void SceneFeatureBank::validate() const {
  if (features.rows() < 1) throw ValidationError("scene bank: no scenes");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw ValidationError("scene bank: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(features.rows()) + " feature rows");
  }
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (!seen.insert(l).second) throw ValidationError("scene bank: duplicate label '" + l + "'");
  }
  if (!features.allFinite()) throw ValidationError("scene bank: non-finite features");
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    if (features.row(r).isZero(0.0)) throw ValidationError("scene bank: row for '" + labels[static_cast<std::size_t>(r)] + "' is all zero");
  }
}

std::size_t SceneFeatureBank::index_of(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw BoundsError("scene bank has no label '" + label + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

void DepthCodebook::validate(double max_depth) const {
  if (theta.rows() < 1 || theta.cols() < 1) throw ValidationError("codebook: empty " + shape_str(theta));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double v = theta.data()[i];
    if (!(v > 0.0) || v > max_depth) {
      throw ValidationError("codebook: entry (" + std::to_string(i / theta.cols()) + ", " +
                            std::to_string(i % theta.cols()) + ") = " + std::to_string(v) +
                            " outside (0, " + std::to_string(max_depth) + "]");
    }
  }
}

void DepthCodebook::clamp(double min_depth, double max_depth) {
  theta = theta.cwiseMax(min_depth).cwiseMin(max_depth);
}

DepthCodebook init_codebook(Eigen::Index n_scenes, const RowVector& init_bin) {
  if (n_scenes < 1) throw ValidationError("init_codebook: need at least one scene");
  if (init_bin.size() < 1) throw ValidationError("init_codebook: empty initial bin");
  for (Eigen::Index k = 0; k < init_bin.size(); ++k) {
    if (!(init_bin(k) > 0.0) || !std::isfinite(init_bin(k))) {
      throw ValidationError("init_codebook: bin entry " + std::to_string(k) + " = " +
                            std::to_string(init_bin(k)) + " is not positive");
    }
  }
  return DepthCodebook{init_bin.replicate(n_scenes, 1)};
}

Vector scene_similarity(const RowVector& query, const SceneFeatureBank& bank, double eps) {
  if (query.size() != bank.width()) {
    throw DimensionError("scene_similarity: query width " + std::to_string(query.size()) +
                         " != bank width " + std::to_string(bank.width()));
  }
  const double qn = std::max(query.norm(), eps);
  Vector sim(bank.size());
  for (Eigen::Index j = 0; j < bank.size(); ++j) {
    const double rn = std::max(bank.features.row(j).norm(), eps);
    sim(j) = std::clamp(query.dot(bank.features.row(j)) / (qn * rn), -1.0, 1.0);
  }
  return sim;
}

std::size_t select_scene(const Vector& similarities) {
  if (similarities.size() == 0) throw DimensionError("select_scene: empty similarity vector");
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < similarities.size(); ++j) {
    if (similarities(j) > similarities(best)) best = j;
  }
  return static_cast<std::size_t>(best);
}

RowVector select_bin(const DepthCodebook& codebook, std::size_t index) {
  if (index >= static_cast<std::size_t>(codebook.scenes())) {
    throw BoundsError("select_bin: scene index " + std::to_string(index) + " outside codebook of " +
                      std::to_string(codebook.scenes()) + " rows");
  }
  return codebook.theta.row(static_cast<Eigen::Index>(index));
}

SceneSelection select(const RowVector& query, const SceneFeatureBank& bank, const DepthCodebook& codebook) {
  if (bank.size() != codebook.scenes()) {
    throw DimensionError("select: bank has " + std::to_string(bank.size()) + " scenes, codebook " +
                         std::to_string(codebook.scenes()));
  }
  SceneSelection s;
  s.similarities = scene_similarity(query, bank);
  s.index = select_scene(s.similarities);
  s.bin = select_bin(codebook, s.index);
  return s;
}

}  // namespace fsdepth
