#include "fsdepth/synth.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace fsdepth {

namespace {


std::vector<std::string> labels_for(std::size_t k) {
  if (k == default_category_labels().size()) return default_category_labels();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back("category" + std::to_string(i));
  return out;
}

}  // namespace

SynthDataset make_synthetic_dataset(const SynthOptions& opt, const RunConfig& config) {
  if (opt.scenes < 1) throw ValidationError("synthetic dataset needs at least one scene");
  if (opt.test_per_scene < 0) throw ValidationError("test_per_scene must be >= 0");
  SynthDataset data;
  data.config = config;
  data.config.train.max_depth = opt.max_depth;
  data.config.max_depth_set = true;
  data.config.validate();

  const auto k = static_cast<Eigen::Index>(config.init_bin.size());
  const RowVector bin = Eigen::Map<const RowVector>(config.init_bin.data(), k);
  const Eigen::Index embed = config.dims.embed;

  data.frozen.encoder = ReferenceTextEncoder::make(config.encoder_seed, config.dims);
  data.frozen.categories = CategoryTokenSet::generate(labels_for(config.init_bin.size()), config.dims.token_width,
                                                      config.token_seed);
  data.frozen.categories.tokens = round_to_f32(data.frozen.categories.tokens);

  Rng rng(opt.seed);
  const PromptContext target{rng.uniform_matrix(config.context_length, config.dims.token_width, -0.5, 0.5)};
  const Matrix target_text = build_text_bank(target, data.frozen.categories, data.frozen.encoder).features;

  SceneFeatureBank& bank = data.frozen.scenes;
  bank.features = round_to_f32(rng.normal_matrix(opt.scenes, embed));
  std::vector<std::vector<Eigen::Index>> scene_categories;
  for (int j = 0; j < opt.scenes; ++j) {
    bank.labels.push_back("scene" + std::to_string(j));
    data.scene_offsets.push_back(rng.uniform(-opt.offset_range, opt.offset_range));
    std::vector<Eigen::Index> all(static_cast<std::size_t>(k));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
    all.resize(std::min<std::size_t>(3, all.size()));
    std::sort(all.begin(), all.end());
    scene_categories.push_back(std::move(all));
  }

  const Eigen::Index grid_h = (opt.src_h + opt.stride - 1) / opt.stride;
  const Eigen::Index grid_w = (opt.src_w + opt.stride - 1) / opt.stride;

  auto make_sample = [&](int j, bool train) {
    const auto& cats = scene_categories[static_cast<std::size_t>(j)];
    const auto bands = static_cast<Eigen::Index>(cats.size());
    FewShotSample s;
    s.scene_label = bank.labels[static_cast<std::size_t>(j)];
    s.scene_feature = bank.features.row(j);
    if (!train) s.scene_feature = round_to_f32(s.scene_feature + rng.normal_matrix(1, embed, 0.1));

    s.patches = PatchFeatureMap{grid_h, grid_w, Matrix(grid_h * grid_w, embed), opt.src_h, opt.src_w, opt.stride};
    std::vector<Eigen::Index> category(static_cast<std::size_t>(grid_h * grid_w));
    for (Eigen::Index y = 0; y < grid_h; ++y) {
      for (Eigen::Index x = 0; x < grid_w; ++x) {
        // Far categories at the top of the image.
        Eigen::Index band = std::min(bands - 1, (grid_h - 1 - y) * bands / grid_h);
        if (rng.uniform01() < 0.2) band = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(bands)));
        const Eigen::Index c = cats[static_cast<std::size_t>(band)];
        const Eigen::Index p = y * grid_w + x;
        category[static_cast<std::size_t>(p)] = c;
        s.patches.features.row(p) = target_text.row(c) + rng.normal_matrix(1, embed, 0.05);
      }
    }
    s.patches.features = round_to_f32(s.patches.features);

    s.gt.depth.resize(opt.src_h, opt.src_w);
    const double offset = data.scene_offsets[static_cast<std::size_t>(j)];
    for (Eigen::Index y = 0; y < opt.src_h; ++y) {
      for (Eigen::Index x = 0; x < opt.src_w; ++x) {
        const Eigen::Index c = category[static_cast<std::size_t>((y / opt.stride) * grid_w + x / opt.stride)];
        double d = std::clamp(bin(c) + offset + opt.pixel_noise * rng.normal(), 0.05, opt.max_depth);
        if (rng.uniform01() < opt.invalid_fraction) d = 0.0;
        s.gt.depth(y, x) = d;
      }
    }
    s.gt.depth = round_to_f32(s.gt.depth);
    return s;
  };

  for (int j = 0; j < opt.scenes; ++j) data.train.push_back(make_sample(j, true));
  for (int j = 0; j < opt.scenes; ++j) {
    for (int t = 0; t < opt.test_per_scene; ++t) data.test.push_back(make_sample(j, false));
  }
  return data;
}

std::filesystem::path write_synthetic_fixture(const SynthDataset& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "gt");

  DatasetManifest manifest;
  manifest.max_depth = data.config.train.max_depth;
  manifest.patch_stride = data.train.front().patches.stride;
  manifest.n_scenes = data.frozen.scenes.size();
  manifest.n_categories = data.frozen.categories.size();
  manifest.category_labels = data.frozen.categories.labels;
  manifest.category_tokens = dir / "tokens.dfb";
  write_bundle(make_tokens_bundle(data.frozen.categories), *manifest.category_tokens);
  write_bundle(make_scene_bank_bundle(data.frozen.scenes), dir / "scene_bank.dfb");

  auto emit = [&](const FewShotSample& s, const std::string& id, bool train) {
    const fs::path image = dir / "images" / (id + ".dfb");
    const fs::path gt = dir / "gt" / (id + ".dfb");
    write_bundle(make_image_bundle(ImageFeatures{s.scene_feature, s.patches}), image);
    write_bundle(make_depth_bundle(s.gt, bundle_kind::kGroundTruth), gt);
    manifest.entries.push_back(ManifestEntry{s.scene_label, train, image, gt});
  };
  for (const auto& s : data.train) emit(s, s.scene_label + "_train", true);
  std::map<std::string, int> counts;
  for (const auto& s : data.test) emit(s, s.scene_label + "_test" + std::to_string(counts[s.scene_label]++), false);

  const fs::path manifest_path = dir / "manifest.txt";
  write_file_atomic(manifest_path, format_manifest(manifest, dir));
  write_file_atomic(dir / "config.txt", format_run_config(data.config));
  return manifest_path;
}

}  // namespace fsdepth
