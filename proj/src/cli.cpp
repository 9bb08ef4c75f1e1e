#include "fsdepth/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "fsdepth/bundleio.hpp"
#include "fsdepth/metrics.hpp"
#include "fsdepth/synth.hpp"
#include "fsdepth/trainer.hpp"

namespace fsdepth::cli {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

/// Rethrows `fn`'s failure with the file that caused it named up front.
template <typename Fn>
auto about(const fs::path& file, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const BundleError& e) {
    throw BundleError(e.kind(), file.string() + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(file.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

FewShotSample load_sample(const ManifestEntry& entry, const DatasetManifest& manifest) {
  FewShotSample s;
  s.scene_label = entry.scene_label;
  const ImageFeatures img = about(entry.image, [&] { return image_from_bundle(read_bundle(entry.image)); });
  if (img.patches.stride != manifest.patch_stride) {
    throw ValidationError(entry.image.string() + ": patch_stride " + std::to_string(img.patches.stride) +
                          " != manifest patch_stride " + std::to_string(manifest.patch_stride));
  }
  s.scene_feature = img.scene_feature;
  s.patches = img.patches;
  s.gt = about(entry.gt, [&] { return depth_from_bundle(read_bundle(entry.gt)); });
  if (s.gt.height() != img.patches.src_h || s.gt.width() != img.patches.src_w) {
    throw DimensionError(entry.gt.string() + ": ground truth " + shape_str(s.gt.depth) + " but image source is " +
                         std::to_string(img.patches.src_h) + "x" + std::to_string(img.patches.src_w));
  }
  return s;
}

int cmd_validate(const fs::path& file, const std::string& kind, std::ostream& out) {
  const auto findings = validate_bundle(file, kind);
  for (const auto& f : findings) out << file.string() << ": " << f.code << ": " << f.message << '\n';
  if (findings.empty()) out << file.string() << ": ok\n";
  return findings.empty() ? kExitOk : kExitValidation;
}

int cmd_train(const fs::path& config_path, const fs::path& manifest_path, const fs::path& out_path,
              std::ostream& out) {
  const RunConfig config = load_run_config(config_path);
  const DatasetManifest manifest = load_manifest(manifest_path);
  TrainConfig train = config.train;
  if (!config.max_depth_set) train.max_depth = manifest.max_depth;
  train.validate();
  if (static_cast<Eigen::Index>(config.init_bin.size()) != manifest.n_categories) {
    throw ValidationError(config_path.string() + ": init_bin has " + std::to_string(config.init_bin.size()) +
                          " entries but the manifest declares " + std::to_string(manifest.n_categories) +
                          " categories");
  }

  FrozenModel frozen;
  frozen.encoder = ReferenceTextEncoder::make(config.encoder_seed, config.dims);
  if (manifest.category_tokens) {
    const fs::path& p = *manifest.category_tokens;
    frozen.categories = about(p, [&] { return tokens_from_bundle(read_bundle(p)); });
    if (frozen.categories.labels != manifest.category_labels) {
      throw ValidationError(p.string() + ": category labels differ from the manifest's");
    }
  } else {
    frozen.categories = CategoryTokenSet::generate(manifest.category_labels, config.dims.token_width,
                                                   config.token_seed);
  }
  if (frozen.categories.token_width() != config.dims.token_width) {
    throw DimensionError(config_path.string() + ": c_tok = " + std::to_string(config.dims.token_width) +
                         " but category tokens have width " + std::to_string(frozen.categories.token_width()));
  }

  std::vector<FewShotSample> samples;
  for (const ManifestEntry* e : manifest.train_entries()) samples.push_back(load_sample(*e, manifest));
  if (samples.empty()) throw ValidationError(manifest_path.string() + ": no train entries");
  frozen.scenes.features.resize(static_cast<Eigen::Index>(samples.size()), samples.front().scene_feature.size());
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (samples[j].scene_feature.size() != frozen.scenes.features.cols()) {
      throw DimensionError(manifest.train_entries()[j]->image.string() + ": scene feature width differs");
    }
    frozen.scenes.labels.push_back(samples[j].scene_label);
    frozen.scenes.features.row(static_cast<Eigen::Index>(j)) = samples[j].scene_feature;
  }

  const RowVector bin = Eigen::Map<const RowVector>(config.init_bin.data(), manifest.n_categories);
  TrainState state = init_state(frozen, config.context_length, bin, train.seed);
  state = fit(samples, frozen, train, std::move(state),
              [&](int epoch, double loss) { out << epoch << ',' << fmt(loss) << '\n'; });

  ModelBundle model;
  model.prompt = state.prompt;
  model.codebook = state.codebook;
  model.categories = frozen.categories;
  model.scene_labels = frozen.scenes.labels;
  model.dims = config.dims;
  model.encoder_seed = config.encoder_seed;
  model.config = train;
  model.loss_history = state.loss_history;
  write_bundle(make_model_bundle(model), out_path);
  return kExitOk;
}

int cmd_predict(const fs::path& model_path, const fs::path& bank_path, const fs::path& image_path,
                const fs::path& out_path, const std::optional<fs::path>& pgm_path, std::ostream& out) {
  const ModelBundle model = about(model_path, [&] { return model_from_bundle(read_bundle(model_path)); });
  const SceneFeatureBank bank = about(bank_path, [&] { return scene_bank_from_bundle(read_bundle(bank_path)); });
  if (bank.labels != model.scene_labels) {
    throw ValidationError(bank_path.string() + ": scene labels differ from those in " + model_path.string());
  }
  const ImageFeatures img = about(image_path, [&] { return image_from_bundle(read_bundle(image_path)); });
  if (img.scene_feature.size() != bank.width()) {
    throw DimensionError(image_path.string() + ": scene feature width " + std::to_string(img.scene_feature.size()) +
                         " != scene bank width " + std::to_string(bank.width()));
  }

  const ReferenceTextEncoder encoder = ReferenceTextEncoder::make(model.encoder_seed, model.dims);
  const TextFeatureBank text = build_text_bank(model.prompt, model.categories, encoder);
  const SceneSelection sel = select(img.scene_feature, bank, model.codebook);
  const PixelDepthMap depth =
      about(image_path, [&] { return predict(text, img.patches, sel, model.config.tau); });

  write_bundle(make_depth_bundle(depth, bundle_kind::kDepth), out_path);
  if (pgm_path) export_pgm(depth, model.config.max_depth, *pgm_path);
  out << bank.labels[sel.index] << '\n';
  return kExitOk;
}

std::vector<PixelDepthMap> load_gts(const DatasetManifest& manifest, std::vector<const ManifestEntry*>& entries) {
  entries = manifest.test_entries();
  std::vector<PixelDepthMap> gts;
  for (const ManifestEntry* e : entries) {
    gts.push_back(about(e->gt, [&] { return depth_from_bundle(read_bundle(e->gt)); }));
  }
  return gts;
}

void write_report(const fs::path& path, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ostringstream csv;
  write_report_csv(csv, rows);
  write_file_atomic(path, csv.str());
}

int cmd_evaluate(const fs::path& pred_dir, const fs::path& manifest_path, const fs::path& report_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::vector<const ManifestEntry*> entries;
  const std::vector<PixelDepthMap> gts = load_gts(manifest, entries);
  if (entries.empty()) throw ValidationError(manifest_path.string() + ": no test entries to evaluate");

  std::vector<std::pair<std::string, MetricReport>> rows;
  std::vector<MetricReport> reports;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const fs::path pred_path = pred_dir / (entries[i]->image_id() + ".dfb");
    const PixelDepthMap pred = about(pred_path, [&] { return depth_from_bundle(read_bundle(pred_path)); });
    if (pred.height() != gts[i].height() || pred.width() != gts[i].width()) {
      throw DimensionError(pred_path.string() + ": geometry mismatch, prediction " + shape_str(pred.depth) +
                           " vs ground truth " + shape_str(gts[i].depth) + " in " + entries[i]->gt.string());
    }
    reports.push_back(about(pred_path, [&] { return compute_metrics(pred, gts[i]); }));
    rows.emplace_back(entries[i]->image_id(), reports.back());
  }
  rows.emplace_back("aggregate", aggregate_reports(reports));
  write_report(report_path, rows);
  return kExitOk;
}

int cmd_baseline(const fs::path& manifest_path, double lo, double hi, std::uint64_t seed,
                 const fs::path& report_path) {
  if (!(hi > lo) || !(hi > 0.0)) {
    throw ValidationError("--range: need LO < HI with HI > 0, got " + fmt(lo) + " " + fmt(hi));
  }
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::vector<const ManifestEntry*> entries;
  const std::vector<PixelDepthMap> gts = load_gts(manifest, entries);
  if (entries.empty()) throw ValidationError(manifest_path.string() + ": no test entries to evaluate");
  const std::vector<MetricReport> reports = random_baseline_reports(gts, lo, hi, seed);
  std::vector<std::pair<std::string, MetricReport>> rows;
  for (std::size_t i = 0; i < entries.size(); ++i) rows.emplace_back(entries[i]->image_id(), reports[i]);
  rows.emplace_back("aggregate", aggregate_reports(reports));
  write_report(report_path, rows);
  return kExitOk;
}

int cmd_gradcheck(const std::optional<std::uint64_t>& seed, std::ostream& out) {
  constexpr double kTolerance = 1e-4;
  std::vector<std::uint64_t> seeds;
  if (seed) {
    seeds.push_back(*seed);
  } else {
    seeds = {0, 1, 2, 3, 4};
  }
  double worst = 0.0;
  for (std::uint64_t s : seeds) {
    const GradCheckReport r = gradient_check(s);
    out << "seed " << s << ": prompt " << fmt(r.max_rel_error_prompt) << ", codebook "
        << fmt(r.max_rel_error_codebook) << " (" << r.entries_checked << " entries)\n";
    worst = std::max(worst, r.max_rel_error());
  }
  out << "max_rel_error " << fmt(worst) << '\n';
  return worst <= kTolerance ? kExitOk : kExitValidation;
}

int cmd_synth(const fs::path& dir, int scenes, std::uint64_t seed, std::ostream& out) {
  SynthOptions opt;
  opt.scenes = scenes;
  opt.seed = seed;
  out << write_synthetic_fixture(make_synthetic_dataset(opt), dir).string() << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot depth estimation from frozen vision-language features", "fsdepth"};
  app.require_subcommand(1, 1);

  std::string file, kind;
  auto* validate = app.add_subcommand("validate-bundle", "Check a feature bundle");
  validate->add_option("FILE", file, "Bundle path")->required();
  validate->add_option("--kind", kind, "Expected kind (image, scene-bank, model, depth, gt, tokens)");

  std::string config, manifest, out_path;
  auto* train = app.add_subcommand("train", "Fit prompt context and depth codebook");
  train->add_option("--config", config)->required();
  train->add_option("--manifest", manifest)->required();
  train->add_option("--out", out_path)->required();

  std::string model, bank, image, pgm;
  auto* pred = app.add_subcommand("predict", "Predict a depth map for one image bundle");
  pred->add_option("--model", model)->required();
  pred->add_option("--scene-bank", bank)->required();
  pred->add_option("--image", image)->required();
  pred->add_option("--out", out_path)->required();
  pred->add_option("--pgm", pgm, "Also export a 16-bit PGM");

  std::string pred_dir, gt_manifest, report;
  auto* eval = app.add_subcommand("evaluate", "Score predictions against ground truth");
  eval->add_option("--pred-dir", pred_dir)->required();
  eval->add_option("--gt-manifest", gt_manifest)->required();
  eval->add_option("--report", report)->required();

  std::vector<double> range;
  std::uint64_t seed = 0;
  auto* base = app.add_subcommand("baseline-random", "Score uniformly random predictions");
  base->add_option("--gt-manifest", gt_manifest)->required();
  base->add_option("--range", range, "LO HI")->expected(2)->required();
  base->add_option("--seed", seed)->required();
  base->add_option("--report", report)->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the training gradients");
  auto* grad_seed = grad->add_option("--seed", seed, "Single seed; default runs seeds 0 to 4");

  int scenes = 3;
  auto* synth = app.add_subcommand("synth-fixture", "Write the synthetic few-shot dataset");
  synth->add_option("--out", out_path)->required();
  synth->add_option("--scenes", scenes)->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "fsdepth: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(file, kind, out);
    if (train->parsed()) return cmd_train(config, manifest, out_path, out);
    if (pred->parsed()) {
      return cmd_predict(model, bank, image, out_path, pgm.empty() ? std::nullopt : std::optional<fs::path>(pgm), out);
    }
    if (eval->parsed()) return cmd_evaluate(pred_dir, gt_manifest, report);
    if (base->parsed()) return cmd_baseline(gt_manifest, range[0], range[1], seed, report);
    if (grad->parsed()) return cmd_gradcheck(grad_seed->count() ? std::optional(seed) : std::nullopt, out);
    if (synth->parsed()) return cmd_synth(out_path, scenes, seed, out);
  } catch (const std::exception& e) {
    err << "fsdepth: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitUsage;
}

}  // namespace fsdepth::cli
