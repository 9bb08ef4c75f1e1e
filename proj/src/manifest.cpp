#include "fsdepth/bundleio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

namespace fsdepth {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

template <typename T>
T parse_value(const std::string& key, const std::string& text, const std::string& source) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError(source + ": value '" + text + "' for '" + key + "' is not a valid number");
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_flat_document(std::string_view text,
                                                                     const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    const std::string line = trim(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    ++line_no;
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ValidationError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

std::string ManifestEntry::image_id() const { return image.stem().string(); }

std::vector<const ManifestEntry*> DatasetManifest::train_entries() const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.train) out.push_back(&e);
  }
  return out;
}

std::vector<const ManifestEntry*> DatasetManifest::test_entries() const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (!e.train) out.push_back(&e);
  }
  return out;
}

void DatasetManifest::validate(bool check_paths) const {
  if (!(max_depth > 0.0)) throw ValidationError("manifest: max_depth must be positive");
  if (patch_stride <= 0) throw ValidationError("manifest: patch_stride must be positive");
  if (static_cast<Eigen::Index>(category_labels.size()) != n_categories) {
    throw ValidationError("manifest: n_categories = " + std::to_string(n_categories) + " but " +
                          std::to_string(category_labels.size()) + " category labels");
  }
  std::set<std::string> train_labels;
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.train && !train_labels.insert(e.scene_label).second) {
      throw ValidationError("manifest: scene '" + e.scene_label + "' has more than one train entry");
    }
    if (!ids.insert(e.image_id()).second) {
      throw ValidationError("manifest: image id '" + e.image_id() + "' appears twice");
    }
    if (check_paths) {
      for (const auto& p : {e.image, e.gt}) {
        if (!std::filesystem::exists(p)) throw ValidationError("manifest: file '" + p.string() + "' does not exist");
      }
    }
  }
  for (const auto& e : entries) {
    if (!e.train && !train_labels.count(e.scene_label)) {
      throw ValidationError("manifest: test entry '" + e.image_id() + "' names scene '" + e.scene_label +
                            "' that has no train entry");
    }
  }
  if (static_cast<Eigen::Index>(train_labels.size()) != n_scenes) {
    throw ValidationError("manifest: n_scenes = " + std::to_string(n_scenes) + " but " +
                          std::to_string(train_labels.size()) + " distinct train scenes");
  }
  if (check_paths && category_tokens && !std::filesystem::exists(*category_tokens)) {
    throw ValidationError("manifest: file '" + category_tokens->string() + "' does not exist");
  }
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                               const std::string& source) {
  DatasetManifest m;
  std::set<std::string> seen;
  for (const auto& [key, value] : parse_flat_document(text, source)) {
    if (key != "entry" && !seen.insert(key).second) throw ValidationError(source + ": key '" + key + "' repeated");
    if (key == "max_depth") {
      m.max_depth = parse_value<double>(key, value, source);
    } else if (key == "patch_stride") {
      m.patch_stride = parse_value<Eigen::Index>(key, value, source);
    } else if (key == "n_scenes") {
      m.n_scenes = parse_value<Eigen::Index>(key, value, source);
    } else if (key == "n_categories") {
      m.n_categories = parse_value<Eigen::Index>(key, value, source);
    } else if (key == "category_labels") {
      m.category_labels = split_list(value);
    } else if (key == "category_tokens") {
      m.category_tokens = resolve(base_dir, value);
    } else if (key == "entry") {
      std::istringstream fields(value);
      std::string label, role, image, gt, extra;
      if (!(fields >> label >> role >> image >> gt) || (fields >> extra)) {
        throw ValidationError(source + ": entry '" + value + "' needs <scene> <train|test> <image> <gt>");
      }
      if (role != "train" && role != "test") {
        throw ValidationError(source + ": entry role '" + role + "' must be train or test");
      }
      m.entries.push_back(ManifestEntry{label, role == "train", resolve(base_dir, image), resolve(base_dir, gt)});
    } else {
      throw ValidationError(source + ": unknown key '" + key + "'");
    }
  }
  for (const char* required : {"max_depth", "patch_stride", "n_scenes", "n_categories", "category_labels"}) {
    if (!seen.count(required)) throw ValidationError(source + ": missing required key '" + std::string(required) + "'");
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  DatasetManifest m = parse_manifest(read_file(path), path.parent_path(), path.string());
  m.validate(true);
  return m;
}

std::string format_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir) {
  auto rel = [&](const std::filesystem::path& p) { return p.lexically_relative(base_dir).generic_string(); };
  std::string out;
  out += "max_depth = " + format_double(m.max_depth) + "\n";
  out += "patch_stride = " + std::to_string(m.patch_stride) + "\n";
  out += "n_scenes = " + std::to_string(m.n_scenes) + "\n";
  out += "n_categories = " + std::to_string(m.n_categories) + "\n";
  out += "category_labels = ";
  for (std::size_t i = 0; i < m.category_labels.size(); ++i) out += (i ? "," : "") + m.category_labels[i];
  out += "\n";
  if (m.category_tokens) out += "category_tokens = " + rel(*m.category_tokens) + "\n";
  for (const auto& e : m.entries) {
    out += "entry = " + e.scene_label + (e.train ? " train " : " test ") + rel(e.image) + " " + rel(e.gt) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  train.validate();
  if (context_length < 0) throw ValidationError("config: context_length must be >= 0");
  if (dims.token_width <= 0 || dims.hidden <= 0 || dims.embed <= 0) {
    throw ValidationError("config: encoder dimensions must be positive");
  }
  if (init_bin.size() < 2) throw ValidationError("config: init_bin needs at least 2 values");
  for (double v : init_bin) {
    if (!(v > 0.0)) throw ValidationError("config: init_bin entries must be positive");
  }
}

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  RunConfig c;
  std::set<std::string> seen;
  for (const auto& [key, value] : parse_flat_document(text, source)) {
    if (!seen.insert(key).second) throw ValidationError(source + ": key '" + key + "' repeated");
    if (key == "lr_prompt") {
      c.train.lr_prompt = parse_value<double>(key, value, source);
    } else if (key == "lr_codebook") {
      c.train.lr_codebook = parse_value<double>(key, value, source);
    } else if (key == "weight_decay") {
      c.train.weight_decay = parse_value<double>(key, value, source);
    } else if (key == "codebook_weight_decay") {
      c.train.codebook_weight_decay = parse_value<double>(key, value, source);
    } else if (key == "epochs") {
      c.train.epochs = parse_value<int>(key, value, source);
    } else if (key == "tau") {
      c.train.tau = parse_value<double>(key, value, source);
    } else if (key == "seed") {
      c.train.seed = parse_value<std::uint64_t>(key, value, source);
    } else if (key == "max_depth") {
      c.train.max_depth = parse_value<double>(key, value, source);
      c.max_depth_set = true;
    } else if (key == "context_length") {
      c.context_length = parse_value<Eigen::Index>(key, value, source);
    } else if (key == "c_tok") {
      c.dims.token_width = parse_value<Eigen::Index>(key, value, source);
    } else if (key == "c_hidden") {
      c.dims.hidden = parse_value<Eigen::Index>(key, value, source);
    } else if (key == "c_embed") {
      c.dims.embed = parse_value<Eigen::Index>(key, value, source);
    } else if (key == "encoder_seed") {
      c.encoder_seed = parse_value<std::uint64_t>(key, value, source);
    } else if (key == "token_seed") {
      c.token_seed = parse_value<std::uint64_t>(key, value, source);
    } else if (key == "init_bin") {
      c.init_bin.clear();
      for (const auto& item : split_list(value)) c.init_bin.push_back(parse_value<double>(key, item, source));
    } else if (key == "manifest") {
      c.manifest = value;
    } else if (key == "model_out") {
      c.model_out = value;
    } else {
      throw ValidationError(source + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string format_run_config(const RunConfig& c) {
  std::string out;
  out += "lr_prompt = " + format_double(c.train.lr_prompt) + "\n";
  out += "lr_codebook = " + format_double(c.train.lr_codebook) + "\n";
  out += "weight_decay = " + format_double(c.train.weight_decay) + "\n";
  out += "codebook_weight_decay = " + format_double(c.train.codebook_weight_decay) + "\n";
  out += "epochs = " + std::to_string(c.train.epochs) + "\n";
  out += "tau = " + format_double(c.train.tau) + "\n";
  out += "seed = " + std::to_string(c.train.seed) + "\n";
  if (c.max_depth_set) out += "max_depth = " + format_double(c.train.max_depth) + "\n";
  out += "context_length = " + std::to_string(c.context_length) + "\n";
  out += "c_tok = " + std::to_string(c.dims.token_width) + "\n";
  out += "c_hidden = " + std::to_string(c.dims.hidden) + "\n";
  out += "c_embed = " + std::to_string(c.dims.embed) + "\n";
  out += "encoder_seed = " + std::to_string(c.encoder_seed) + "\n";
  out += "token_seed = " + std::to_string(c.token_seed) + "\n";
  out += "init_bin = ";
  for (std::size_t i = 0; i < c.init_bin.size(); ++i) out += (i ? "," : "") + format_double(c.init_bin[i]);
  out += "\n";
  if (c.manifest) out += "manifest = " + c.manifest->generic_string() + "\n";
  if (c.model_out) out += "model_out = " + c.model_out->generic_string() + "\n";
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.string());
}

}  // namespace fsdepth
