#include <gtest/gtest.h>


#include <fstream>

#include "fsdepth/bundleio.hpp"
#include "oracles.hpp"

using namespace fsdepth;

namespace {

RowVector default_bin() { return Eigen::Map<const RowVector>(default_depth_bin().data(), 7); }

ImageFeatures small_image(Rng& rng) {
  ImageFeatures img;
  img.patches = PatchFeatureMap{2, 3, rng.normal_matrix(6, 4), 7, 12, 4};
  img.scene_feature = rng.normal_matrix(1, 4);
  return img;
}

bool has_code(const std::vector<Finding>& f, const std::string& code, const std::string& needle = {}) {
  for (const auto& x : f) {
    if (x.code == code && x.message.find(needle) != std::string::npos) return true;
  }
  return false;
}

BundleErrorKind decode_error(const std::string& bytes) {
  try {
    decode_bundle(bytes);
  } catch (const BundleError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return BundleErrorKind::kIo;
}

}  // namespace

TEST(Bundle, MetadataOnlyIsValid) {
  Bundle b;
  b.set_meta("kind", std::string("notes"));
  const Bundle back = decode_bundle(encode_bundle(b));
  EXPECT_TRUE(back.tensors.empty());
  EXPECT_EQ(back.meta("kind"), "notes");
  EXPECT_EQ(encode_bundle(back), encode_bundle(b));
}

TEST(Bundle, CodebookRoundTripIsBitIdentical) {
  Rng rng(1);
  const Matrix theta = round_to_f32(rng.uniform_matrix(27, 7, 0.5, 9.0));
  Bundle b;
  b.put_tensor("codebook_theta", {27, 7}, theta);
  const std::string bytes = encode_bundle(b);
  const Bundle back = decode_bundle(bytes);
  EXPECT_EQ(back.matrix("codebook_theta"), theta);
  EXPECT_EQ(encode_bundle(back), bytes);
}

TEST(Bundle, LayoutPrefix) {
  Bundle b;
  b.put_tensor("x", {2}, Matrix::Ones(1, 2));
  const std::string bytes = encode_bundle(b);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "DFB1");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  const std::string header = bytes.substr(12, len);
  EXPECT_NE(header.find("[tensors]\nx f32 2 0 8 "), std::string::npos) << header;
  EXPECT_EQ(bytes.size(), 12 + len + 8);
  // 1.0f little endian
  EXPECT_EQ(bytes.substr(12 + len, 4), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Bundle, EveryPayloadByteFlipIsDetected) {
  Rng rng(2);
  Bundle b;
  b.put_tensor("a", {3, 4}, rng.normal_matrix(3, 4));
  b.put_tensor("b", {5}, rng.normal_matrix(1, 5));
  const std::string bytes = encode_bundle(b);
  const std::size_t payload = bytes.size() - 4 * (12 + 5);
  for (std::size_t i = payload; i < bytes.size(); ++i) {
    std::string bad = bytes;
    bad[i] = static_cast<char>(bad[i] ^ 0x01);
    ASSERT_EQ(decode_error(bad), BundleErrorKind::kChecksum) << i;
  }
}

TEST(Bundle, HeaderFlipsFailCleanly) {
  Bundle b;
  b.set_meta("kind", std::string("depth"));
  b.put_tensor("depth", {2, 2}, Matrix::Ones(2, 2));
  const std::string bytes = encode_bundle(b);
  for (std::size_t i = 0; i < bytes.size() - 16; ++i) {
    for (int bit = 0; bit < 8; ++bit) {
      std::string bad = bytes;
      bad[i] = static_cast<char>(bad[i] ^ (1 << bit));
      try {
        decode_bundle(bad);
      } catch (const BundleError&) {
      }
    }
  }
}

TEST(Bundle, DistinctErrorKinds) {
  Bundle b;
  b.put_tensor("a", {2}, Matrix::Ones(1, 2));
  b.put_tensor("b", {2}, Matrix::Ones(1, 2));
  const std::string good = encode_bundle(b);

  EXPECT_EQ(decode_error("XXXX" + good.substr(4)), BundleErrorKind::kBadMagic);
  EXPECT_EQ(decode_error(good.substr(0, good.size() - 3)), BundleErrorKind::kTruncated);
  EXPECT_EQ(decode_error(good + "zz"), BundleErrorKind::kTrailingData);
  EXPECT_EQ(decode_error(good.substr(0, 8)), BundleErrorKind::kTruncated);

  auto rewrite = [&](const std::string& from, const std::string& to) {
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(good[4 + i])) << (8 * i);
    std::string header = good.substr(12, len);
    const auto pos = header.find(from);
    EXPECT_NE(pos, std::string::npos);
    header.replace(pos, from.size(), to);
    std::string out = "DFB1";
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((header.size() >> (8 * i)) & 0xff));
    return out + header + good.substr(12 + len);
  };
  EXPECT_EQ(decode_error(rewrite("b f32 2 8 8", "b f32 2 4 8")), BundleErrorKind::kOverlap);
  EXPECT_EQ(decode_error(rewrite("b f32 2 8 8", "b f32 3 8 8")), BundleErrorKind::kShapeMismatch);
  EXPECT_EQ(decode_error(rewrite("b f32 2 8 8", "a f32 2 8 8")), BundleErrorKind::kDuplicate);
  EXPECT_EQ(decode_error(rewrite("[tensors]", "[tensor]")), BundleErrorKind::kHeader);
  EXPECT_EQ(decode_error(rewrite("b f32", "b f64")), BundleErrorKind::kHeader);
}

TEST(Bundle, FileRoundTripAndAtomicWrite) {
  const auto dir = oracle::fresh_dir("bundle");
  Rng rng(3);
  const ImageFeatures img = small_image(rng);
  const Bundle b = make_image_bundle(img);
  write_bundle(b, dir / "img.dfb");
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator()), 1);
  const ImageFeatures back = image_from_bundle(read_bundle(dir / "img.dfb"));
  EXPECT_EQ(back.patches.features, round_to_f32(img.patches.features));
  EXPECT_EQ(back.patches.grid_w, 3);
  EXPECT_EQ(back.patches.src_h, 7);
  EXPECT_THROW(read_bundle(dir / "missing.dfb"), BundleError);
  std::filesystem::remove_all(dir);
}

TEST(ValidateBundle, GoodImageHasNoFindings) {
  Rng rng(4);
  EXPECT_TRUE(validate_bundle(make_image_bundle(small_image(rng)), "image").empty());
}

TEST(ValidateBundle, MissingStrideNamed) {
  Rng rng(5);
  Bundle b = make_image_bundle(small_image(rng));
  b.metadata.erase("patch_stride");
  const auto f = validate_bundle(b, "image");
  EXPECT_TRUE(has_code(f, "missing-metadata", "patch_stride"));
}

TEST(ValidateBundle, GeometryMismatch) {
  Rng rng(6);
  Bundle b = make_image_bundle(small_image(rng));
  b.set_meta("src_w", std::int64_t{20});
  EXPECT_TRUE(has_code(validate_bundle(b, "image"), "geometry"));
  EXPECT_THROW(image_from_bundle(b), BundleError);
}

TEST(ValidateBundle, KindMismatchAndUnknown) {
  Rng rng(7);
  const Bundle b = make_image_bundle(small_image(rng));
  EXPECT_TRUE(has_code(validate_bundle(b, "model"), "kind-mismatch"));
  Bundle odd;
  odd.set_meta("kind", std::string("banana"));
  EXPECT_TRUE(has_code(validate_bundle(odd), "unknown-kind"));
}

TEST(ValidateBundle, PathVersionNeverThrows) {
  const auto dir = oracle::fresh_dir("validate");
  std::ofstream(dir / "junk.dfb") << "not a bundle";
  std::vector<Finding> f;
  EXPECT_NO_THROW(f = validate_bundle(dir / "junk.dfb"));
  ASSERT_FALSE(f.empty());
  EXPECT_EQ(f[0].code, "bad-magic");
  EXPECT_FALSE(validate_bundle(dir / "absent.dfb").empty());
  std::filesystem::remove_all(dir);
}

TEST(ModelBundle, RoundTrip) {
  Rng rng(8);
  ModelBundle m;
  m.prompt = PromptContext::random(3, 6, 1);
  m.codebook = init_codebook(4, default_bin());
  m.codebook.theta(2, 3) = 4.5;
  m.categories = CategoryTokenSet::generate(default_category_labels(), 6, 2);
  m.scene_labels = {"a", "b", "c", "d"};
  m.dims = EncoderDims{6, 9, 5};
  m.encoder_seed = 123456789012345ull;
  m.config.tau = 0.07;
  m.loss_history = {0.5, 0.25};
  const ModelBundle back = model_from_bundle(decode_bundle(encode_bundle(make_model_bundle(m))));
  EXPECT_EQ(back.codebook.theta, m.codebook.theta);
  EXPECT_EQ(back.prompt.vectors, round_to_f32(m.prompt.vectors));
  EXPECT_EQ(back.scene_labels, m.scene_labels);
  EXPECT_EQ(back.categories.labels, m.categories.labels);
  EXPECT_EQ(back.encoder_seed, m.encoder_seed);
  EXPECT_EQ(back.dims.hidden, 9);
  EXPECT_EQ(back.config.tau, 0.07);
  EXPECT_EQ(back.loss_history, m.loss_history);
  EXPECT_TRUE(validate_bundle(make_model_bundle(m), "model").empty());
}

TEST(SceneBankAndTokens, RoundTrip) {
  Rng rng(9);
  const SceneFeatureBank bank{{"kitchen", "office"}, round_to_f32(rng.normal_matrix(2, 5))};
  const SceneFeatureBank back = scene_bank_from_bundle(decode_bundle(encode_bundle(make_scene_bank_bundle(bank))));
  EXPECT_EQ(back.labels, bank.labels);
  EXPECT_EQ(back.features, bank.features);

  CategoryTokenSet cats = CategoryTokenSet::generate(default_category_labels(), 4, 1);
  cats.tokens = round_to_f32(cats.tokens);
  const CategoryTokenSet tb = tokens_from_bundle(decode_bundle(encode_bundle(make_tokens_bundle(cats))));
  EXPECT_EQ(tb.labels, cats.labels);
  EXPECT_EQ(tb.tokens, cats.tokens);
}

TEST(Pgm, ConstantAndEndpoints) {
  const std::string five = encode_pgm(PixelDepthMap{Matrix::Constant(2, 3, 5.0)}, 10.0);
  const GrayImage g = decode_pgm(five);
  EXPECT_EQ(g.pixels.cols(), 3);
  EXPECT_EQ(g.pixels.rows(), 2);
  for (Eigen::Index i = 0; i < g.pixels.size(); ++i) EXPECT_NEAR(g.pixels.data()[i], 32768, 1);
  EXPECT_EQ(g.max_depth, 10.0);

  Matrix ends(1, 2);
  ends << 0.0, 10.0;
  const GrayImage e = decode_pgm(encode_pgm(PixelDepthMap{ends}, 10.0));
  EXPECT_EQ(e.pixels(0, 0), 0);
  EXPECT_EQ(e.pixels(0, 1), 65535);
}

TEST(Pgm, HeaderBytesAndByteOrder) {
  const std::string bytes = encode_pgm(PixelDepthMap{Matrix::Constant(1, 1, 10.0)}, 10.0);
  EXPECT_EQ(bytes.substr(0, 3), "P5\n");
  EXPECT_NE(bytes.find("# max_depth=10\n"), std::string::npos);
  EXPECT_EQ(bytes.substr(bytes.size() - 2), std::string("\xff\xff", 2));
  const std::string half = encode_pgm(PixelDepthMap{Matrix::Constant(1, 1, 256.0 / 65535.0)}, 1.0);
  EXPECT_EQ(half.substr(half.size() - 2), std::string("\x01\x00", 2));
}

TEST(Pgm, RoundTripWithinQuantization) {
  Rng rng(10);
  const PixelDepthMap d{rng.uniform_matrix(9, 11, 0.0, 7.5)};
  const PixelDepthMap back = decode_pgm(encode_pgm(d, 7.5)).to_depth();
  EXPECT_LE((back.depth - d.depth).cwiseAbs().maxCoeff(), 7.5 / 65535.0);
}

TEST(Pgm, NonpositiveMaxDepth) {
  EXPECT_THROW(encode_pgm(PixelDepthMap{Matrix::Ones(1, 1)}, 0.0), ValidationError);
  EXPECT_THROW(encode_pgm(PixelDepthMap{Matrix::Ones(1, 1)}, -2.0), ValidationError);
}

TEST(Manifest, ParseAndFormat) {
  const std::string text =
      "# test manifest\n"
      "max_depth = 10\n"
      "patch_stride = 32\n"
      "n_scenes = 2\n"
      "n_categories = 3\n"
      "category_labels = close, far, unseen\n"
      "entry = kitchen train img/k0.dfb gt/k0.dfb\n"
      "entry = office train img/o0.dfb gt/o0.dfb\n"
      "entry = kitchen test img/k1.dfb gt/k1.dfb\n";
  const DatasetManifest m = parse_manifest(text, "/data");
  EXPECT_NO_THROW(m.validate(false));
  EXPECT_EQ(m.category_labels[1], "far");
  EXPECT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].image, std::filesystem::path("/data/img/k0.dfb"));
  EXPECT_EQ(m.entries[2].image_id(), "k1");
  EXPECT_EQ(m.train_entries().size(), 2u);
  const DatasetManifest again = parse_manifest(format_manifest(m, "/data"), "/data");
  EXPECT_EQ(again.entries[1].gt, m.entries[1].gt);
  EXPECT_EQ(again.category_labels, m.category_labels);
}

TEST(Manifest, Errors) {
  const std::string head =
      "max_depth = 10\npatch_stride = 32\nn_scenes = 1\nn_categories = 2\ncategory_labels = a,b\n";
  EXPECT_THROW(parse_manifest(head + "colour = red\n", "."), ValidationError);
  EXPECT_THROW(parse_manifest("max_depth = 10\n", "."), ValidationError);
  EXPECT_THROW(parse_manifest(head + "entry = x maybe i g\n", "."), ValidationError);
  EXPECT_THROW(parse_manifest(head + "max_depth = 5\n", "."), ValidationError);
  EXPECT_THROW(parse_manifest("max_depth = ten\n", "."), ValidationError);
  EXPECT_THROW(parse_manifest(head + "entry = x test i g\n", ".").validate(false), ValidationError);
  EXPECT_THROW(parse_manifest(head + "entry = x train i g\n", ".").validate(true), ValidationError);
}

TEST(RunConfig, DefaultsOverridesAndUnknownKeys) {
  const RunConfig d = parse_run_config("");
  EXPECT_EQ(d.train.lr_prompt, 0.5);
  EXPECT_EQ(d.train.lr_codebook, 0.01);
  EXPECT_EQ(d.train.weight_decay, 1e-5);
  EXPECT_EQ(d.train.epochs, 200);
  EXPECT_EQ(d.train.tau, 0.1);
  EXPECT_EQ(d.context_length, 3);
  EXPECT_EQ(d.init_bin, default_depth_bin());

  const RunConfig c = parse_run_config("epochs = 5\ntau = 0.2\ninit_bin = 1, 2\nmax_depth = 8\n");
  EXPECT_EQ(c.train.epochs, 5);
  EXPECT_EQ(c.train.tau, 0.2);
  EXPECT_EQ(c.init_bin, (std::vector<double>{1, 2}));
  EXPECT_TRUE(c.max_depth_set);

  const RunConfig again = parse_run_config(format_run_config(c));
  EXPECT_EQ(again.train.tau, c.train.tau);
  EXPECT_EQ(again.init_bin, c.init_bin);
  EXPECT_EQ(again.train.max_depth, 8.0);

  EXPECT_THROW(parse_run_config("learning_rate = 1\n"), ValidationError);
  EXPECT_THROW(parse_run_config("epochs = 0\n"), ValidationError);
  EXPECT_THROW(parse_run_config("init_bin = 1, 0\n"), ValidationError);
  EXPECT_THROW(parse_run_config("epochs = 3\nepochs = 4\n"), ValidationError);
}
