#include "fsdepth/bundleio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

namespace fsdepth {

namespace {

constexpr std::size_t kPrefixBytes = 12;

std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string encode_floats(const std::vector<float>& data) {
  std::string out(data.size() * 4, '\0');
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

std::vector<float> decode_floats(std::string_view bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
  });
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_hex32(const std::string& s, std::uint32_t& out) {
  if (s.size() != 8) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out, 16);
  return ec == std::errc() && ptr == end;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<float> to_floats(const Matrix& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return out;
}

std::size_t as_size(Eigen::Index v) { return static_cast<std::size_t>(v); }

}  // namespace

const char* to_string(BundleErrorKind kind) {
  switch (kind) {
    case BundleErrorKind::kIo: return "io";
    case BundleErrorKind::kBadMagic: return "bad-magic";
    case BundleErrorKind::kTruncated: return "truncated";
    case BundleErrorKind::kHeader: return "header";
    case BundleErrorKind::kOverlap: return "overlap";
    case BundleErrorKind::kShapeMismatch: return "shape-mismatch";
    case BundleErrorKind::kChecksum: return "checksum";
    case BundleErrorKind::kDuplicate: return "duplicate";
    case BundleErrorKind::kTrailingData: return "trailing-data";
    case BundleErrorKind::kMissing: return "missing";
  }
  return "unknown";
}

std::size_t TensorEntry::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

bool Bundle::has_tensor(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const TensorEntry& t) { return t.name == name; });
}

const TensorEntry& Bundle::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw BundleError(BundleErrorKind::kMissing, "no tensor named '" + name + "'");
}

void Bundle::put_tensor(const std::string& name, std::vector<std::size_t> shape, const Matrix& values) {
  TensorEntry entry{name, std::move(shape), to_floats(values)};
  if (entry.shape.empty() || entry.shape.size() > 3) {
    throw BundleError(BundleErrorKind::kShapeMismatch, "tensor '" + name + "' must have 1 to 3 dimensions");
  }
  if (entry.element_count() != entry.data.size()) {
    throw BundleError(BundleErrorKind::kShapeMismatch, "tensor '" + name + "' shape " + shape_text(entry.shape) +
                                                           " does not hold " + std::to_string(entry.data.size()) + " values");
  }
  for (auto& t : tensors) {
    if (t.name == name) {
      t = std::move(entry);
      return;
    }
  }
  tensors.push_back(std::move(entry));
}

Matrix round_to_f32(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) out.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  return out;
}

Matrix Bundle::matrix(const std::string& name) const {
  const TensorEntry& t = tensor(name);
  Eigen::Index rows = 1, cols = 1;
  if (t.shape.size() == 1) {
    cols = static_cast<Eigen::Index>(t.shape[0]);
  } else if (t.shape.size() == 2) {
    rows = static_cast<Eigen::Index>(t.shape[0]);
    cols = static_cast<Eigen::Index>(t.shape[1]);
  } else {
    rows = static_cast<Eigen::Index>(t.shape[0] * t.shape[1]);
    cols = static_cast<Eigen::Index>(t.shape[2]);
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(t.data[static_cast<std::size_t>(i)]);
  return m;
}

const std::string& Bundle::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw BundleError(BundleErrorKind::kMissing, "metadata key '" + key + "' is missing");
  return it->second;
}

std::optional<std::string> Bundle::find_meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) return std::nullopt;
  return it->second;
}

double Bundle::meta_double(const std::string& key) const {
  double v = 0;
  if (!parse_number(meta(key), v)) throw BundleError(BundleErrorKind::kHeader, "metadata '" + key + "' is not a number");
  return v;
}

std::int64_t Bundle::meta_int(const std::string& key) const {
  std::int64_t v = 0;
  if (!parse_number(meta(key), v)) throw BundleError(BundleErrorKind::kHeader, "metadata '" + key + "' is not an integer");
  return v;
}

std::uint64_t Bundle::meta_u64(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_number(meta(key), v)) throw BundleError(BundleErrorKind::kHeader, "metadata '" + key + "' is not an unsigned integer");
  return v;
}

std::vector<std::string> Bundle::meta_list(const std::string& key) const {
  const std::string& v = meta(key);
  if (v.empty()) return {};
  return split(v, ',');
}

void Bundle::set_meta(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw BundleError(BundleErrorKind::kHeader, "invalid metadata key '" + key + "'");
  if (value.find_first_of("\r\n") != std::string::npos || trim(value) != value) {
    throw BundleError(BundleErrorKind::kHeader, "metadata value for '" + key + "' has line breaks or edge whitespace");
  }
  metadata[key] = value;
}

void Bundle::set_meta(const std::string& key, double value) { set_meta(key, format_double(value)); }
void Bundle::set_meta(const std::string& key, std::int64_t value) { set_meta(key, std::to_string(value)); }
void Bundle::set_meta(const std::string& key, std::uint64_t value) { set_meta(key, std::to_string(value)); }

void Bundle::set_meta_list(const std::string& key, const std::vector<std::string>& values) {
  std::string joined;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].find(',') != std::string::npos || values[i].empty() || trim(values[i]) != values[i]) {
      throw BundleError(BundleErrorKind::kHeader, "list item '" + values[i] + "' for '" + key + "' is not storable");
    }
    if (i) joined += ',';
    joined += values[i];
  }
  set_meta(key, joined);
}

std::string encode_bundle(const Bundle& bundle) {
  std::string header;
  for (const auto& [key, value] : bundle.metadata) {
    if (!valid_key(key)) throw BundleError(BundleErrorKind::kHeader, "invalid metadata key '" + key + "'");
    if (value.find_first_of("\r\n") != std::string::npos) {
      throw BundleError(BundleErrorKind::kHeader, "metadata value for '" + key + "' contains a line break");
    }
    header += key + " = " + value + "\n";
  }
  header += "[tensors]\n";

  std::string payload;
  std::vector<std::string> seen;
  for (const auto& t : bundle.tensors) {
    if (!valid_key(t.name)) throw BundleError(BundleErrorKind::kHeader, "invalid tensor name '" + t.name + "'");
    if (std::find(seen.begin(), seen.end(), t.name) != seen.end()) {
      throw BundleError(BundleErrorKind::kDuplicate, "tensor '" + t.name + "' appears twice");
    }
    seen.push_back(t.name);
    if (t.shape.empty() || t.shape.size() > 3 || t.element_count() != t.data.size()) {
      throw BundleError(BundleErrorKind::kShapeMismatch, "tensor '" + t.name + "' shape " + shape_text(t.shape) +
                                                             " does not hold " + std::to_string(t.data.size()) + " values");
    }
    const std::string bytes = encode_floats(t.data);
    char crc[16];
    std::snprintf(crc, sizeof(crc), "%08x", crc32_of(bytes));
    header += t.name + " f32 " + shape_text(t.shape) + " " + std::to_string(payload.size()) + " " +
              std::to_string(bytes.size()) + " " + crc + "\n";
    payload += bytes;
  }

  std::string out(kBundleMagic);
  const std::uint64_t len = header.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xffu));
  out += header;
  out += payload;
  return out;
}

Bundle decode_bundle(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != kBundleMagic) {
    throw BundleError(BundleErrorKind::kBadMagic, "file does not start with DFB1");
  }
  if (bytes.size() < kPrefixBytes) throw BundleError(BundleErrorKind::kTruncated, "missing header length");
  std::uint64_t header_len = 0;
  for (int b = 0; b < 8; ++b) header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[4 + b])) << (8 * b);
  if (header_len > bytes.size() - kPrefixBytes) {
    throw BundleError(BundleErrorKind::kTruncated, "header length " + std::to_string(header_len) + " exceeds file size");
  }
  const std::string_view header = bytes.substr(kPrefixBytes, header_len);
  const std::string_view payload = bytes.substr(kPrefixBytes + header_len);

  struct Declared {
    TensorEntry entry;
    std::uint64_t offset;
    std::uint64_t length;
    std::uint32_t crc;
  };
  Bundle bundle;
  std::vector<Declared> declared;
  bool in_tensors = false;
  std::size_t line_no = 0;
  for (const std::string& raw : split(header, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "header line " + std::to_string(line_no);
    if (line == "[tensors]") {
      if (in_tensors) throw BundleError(BundleErrorKind::kHeader, where + ": repeated [tensors]");
      in_tensors = true;
      continue;
    }
    if (!in_tensors) {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) throw BundleError(BundleErrorKind::kHeader, where + ": expected key = value");
      const std::string key = trim(std::string_view(line).substr(0, eq));
      if (!valid_key(key)) throw BundleError(BundleErrorKind::kHeader, where + ": invalid key '" + key + "'");
      if (bundle.metadata.count(key)) throw BundleError(BundleErrorKind::kDuplicate, where + ": repeated key '" + key + "'");
      bundle.metadata[key] = trim(std::string_view(line).substr(eq + 1));
      continue;
    }
    std::istringstream fields(line);
    std::string name, dtype, shape, offset, length, crc, extra;
    if (!(fields >> name >> dtype >> shape >> offset >> length >> crc) || (fields >> extra)) {
      throw BundleError(BundleErrorKind::kHeader, where + ": expected 6 tensor fields");
    }
    if (dtype != "f32") throw BundleError(BundleErrorKind::kHeader, where + ": unsupported element type '" + dtype + "'");
    if (!valid_key(name)) throw BundleError(BundleErrorKind::kHeader, where + ": invalid tensor name '" + name + "'");
    Declared d{TensorEntry{name, {}, {}}, 0, 0, 0};
    for (const std::string& dim : split(shape, 'x')) {
      std::size_t v = 0;
      if (!parse_number(dim, v)) throw BundleError(BundleErrorKind::kHeader, where + ": bad shape '" + shape + "'");
      d.entry.shape.push_back(v);
    }
    if (d.entry.shape.size() > 3) throw BundleError(BundleErrorKind::kHeader, where + ": more than 3 dimensions");
    if (!parse_number(offset, d.offset) || !parse_number(length, d.length) || !parse_hex32(crc, d.crc)) {
      throw BundleError(BundleErrorKind::kHeader, where + ": bad offset, length or checksum");
    }
    for (const auto& other : declared) {
      if (other.entry.name == name) throw BundleError(BundleErrorKind::kDuplicate, where + ": tensor '" + name + "' repeated");
    }
    declared.push_back(std::move(d));
  }
  if (!in_tensors) throw BundleError(BundleErrorKind::kHeader, "header has no [tensors] section");

  // Element counts are computed with overflow checks before any allocation.
  for (auto& d : declared) {
    std::uint64_t count = 1;
    for (std::size_t dim : d.entry.shape) {
      if (dim != 0 && count > UINT64_MAX / 4 / dim) {
        throw BundleError(BundleErrorKind::kShapeMismatch, "tensor '" + d.entry.name + "' shape overflows");
      }
      count *= dim;
    }
    if (d.length != 4 * count) {
      throw BundleError(BundleErrorKind::kShapeMismatch, "tensor '" + d.entry.name + "' declares " +
                                                             std::to_string(d.length) + " bytes for shape " +
                                                             shape_text(d.entry.shape));
    }
    if (d.offset > payload.size() || d.length > payload.size() - d.offset) {
      throw BundleError(BundleErrorKind::kTruncated, "tensor '" + d.entry.name + "' extends past end of file");
    }
  }
  std::vector<const Declared*> by_offset;
  for (const auto& d : declared) by_offset.push_back(&d);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  std::uint64_t end = 0;
  for (std::size_t i = 0; i < by_offset.size(); ++i) {
    if (i > 0 && by_offset[i]->offset < end) {
      throw BundleError(BundleErrorKind::kOverlap, "tensor '" + by_offset[i]->entry.name + "' overlaps '" +
                                                       by_offset[i - 1]->entry.name + "'");
    }
    end = std::max(end, by_offset[i]->offset + by_offset[i]->length);
  }
  if (end != payload.size()) {
    throw BundleError(BundleErrorKind::kTrailingData, std::to_string(payload.size() - end) + " bytes after the last tensor");
  }

  for (auto& d : declared) {
    const std::string bytes(payload.substr(d.offset, d.length));
    if (crc32_of(bytes) != d.crc) {
      throw BundleError(BundleErrorKind::kChecksum, "tensor '" + d.entry.name + "' payload fails its CRC-32");
    }
    d.entry.data = decode_floats(bytes);
    bundle.tensors.push_back(std::move(d.entry));
  }
  return bundle;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw BundleError(BundleErrorKind::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw BundleError(BundleErrorKind::kIo, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw BundleError(BundleErrorKind::kIo, "cannot rename onto '" + path.string() + "'");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(BundleErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bundle(const Bundle& bundle, const std::filesystem::path& path) {
  write_file_atomic(path, encode_bundle(bundle));
}

Bundle read_bundle(const std::filesystem::path& path) {
  try {
    return decode_bundle(read_file(path));
  } catch (const BundleError& e) {
    throw BundleError(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Kinds
// ---------------------------------------------------------------------------

namespace {

void require_tensor(const Bundle& b, const std::string& name, std::size_t dims, std::vector<Finding>& out) {
  if (!b.has_tensor(name)) {
    out.push_back({"missing-tensor", "required tensor '" + name + "' is missing"});
    return;
  }
  const auto& t = b.tensor(name);
  if (t.shape.size() != dims) {
    out.push_back({"tensor-rank", "tensor '" + name + "' has shape " + shape_text(t.shape) + ", expected " +
                                      std::to_string(dims) + " dimensions"});
  }
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      out.push_back({"non-finite", "tensor '" + name + "' contains non-finite values"});
      break;
    }
  }
}

std::optional<std::int64_t> require_int(const Bundle& b, const std::string& key, std::vector<Finding>& out) {
  auto v = b.find_meta(key);
  if (!v) {
    out.push_back({"missing-metadata", "required metadata '" + key + "' is missing"});
    return std::nullopt;
  }
  std::int64_t x = 0;
  if (!parse_number(*v, x)) {
    out.push_back({"bad-metadata", "metadata '" + key + "' = '" + *v + "' is not an integer"});
    return std::nullopt;
  }
  return x;
}

void require_meta(const Bundle& b, const std::string& key, std::vector<Finding>& out) {
  if (!b.find_meta(key)) out.push_back({"missing-metadata", "required metadata '" + key + "' is missing"});
}

void check_labels(const Bundle& b, const std::string& key, std::size_t expected, const std::string& what,
                  std::vector<Finding>& out) {
  if (!b.find_meta(key)) {
    out.push_back({"missing-metadata", "required metadata '" + key + "' is missing"});
    return;
  }
  const auto labels = b.meta_list(key);
  if (labels.size() != expected) {
    out.push_back({"label-count", key + " lists " + std::to_string(labels.size()) + " labels for " +
                                      std::to_string(expected) + " " + what});
  }
  std::vector<std::string> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    out.push_back({"duplicate-label", key + " contains duplicate labels"});
  }
}

}  // namespace

std::vector<Finding> validate_bundle(const Bundle& b, const std::string& expected_kind) {
  std::vector<Finding> out;
  const auto declared = b.find_meta("kind");
  std::string kind = expected_kind;
  if (kind.empty()) {
    if (!declared) {
      out.push_back({"missing-metadata", "required metadata 'kind' is missing"});
      return out;
    }
    kind = *declared;
  } else if (declared && *declared != kind) {
    out.push_back({"kind-mismatch", "bundle declares kind '" + *declared + "', expected '" + kind + "'"});
  }

  if (kind == bundle_kind::kImage) {
    require_tensor(b, "patch_features", 3, out);
    require_tensor(b, "scene_feature", 2, out);
    const auto src_h = require_int(b, "src_h", out);
    const auto src_w = require_int(b, "src_w", out);
    const auto stride = require_int(b, "patch_stride", out);
    if (b.has_tensor("patch_features") && b.tensor("patch_features").shape.size() == 3 && src_h && src_w && stride) {
      const auto& shape = b.tensor("patch_features").shape;
      if (*stride <= 0 || *src_h <= 0 || *src_w <= 0) {
        out.push_back({"geometry", "src_h, src_w and patch_stride must be positive"});
      } else {
        const auto gh = static_cast<std::size_t>((*src_h + *stride - 1) / *stride);
        const auto gw = static_cast<std::size_t>((*src_w + *stride - 1) / *stride);
        if (shape[0] != gh || shape[1] != gw) {
          out.push_back({"geometry", "patch grid " + std::to_string(shape[0]) + "x" + std::to_string(shape[1]) +
                                         " inconsistent with " + std::to_string(*src_h) + "x" + std::to_string(*src_w) +
                                         " pixels at stride " + std::to_string(*stride) + " (expected " +
                                         std::to_string(gh) + "x" + std::to_string(gw) + ")"});
        }
      }
      if (b.has_tensor("scene_feature") && b.tensor("scene_feature").shape.size() == 2) {
        const auto& s = b.tensor("scene_feature").shape;
        if (s[0] != 1 || s[1] != shape[2]) {
          out.push_back({"feature-width", "scene_feature shape " + shape_text(s) + " does not match patch width " +
                                              std::to_string(shape[2])});
        }
      }
    }
  } else if (kind == bundle_kind::kSceneBank) {
    require_tensor(b, "scene_features", 2, out);
    if (b.has_tensor("scene_features") && b.tensor("scene_features").shape.size() == 2) {
      const auto& shape = b.tensor("scene_features").shape;
      if (shape[0] < 1) out.push_back({"empty", "scene bank has no scenes"});
      check_labels(b, "scene_labels", shape[0], "scene rows", out);
    }
  } else if (kind == bundle_kind::kModel) {
    require_tensor(b, "prompt_V", 2, out);
    require_tensor(b, "codebook_theta", 2, out);
    require_tensor(b, "category_tokens", 2, out);
    for (const char* key : {"encoder_seed", "c_tok", "c_hidden", "c_embed", "tau", "max_depth"}) require_meta(b, key, out);
    if (b.has_tensor("codebook_theta") && b.tensor("codebook_theta").shape.size() == 2) {
      const auto& theta = b.tensor("codebook_theta");
      check_labels(b, "scene_labels", theta.shape[0], "codebook rows", out);
      check_labels(b, "category_labels", theta.shape[1], "codebook columns", out);
      if (std::any_of(theta.data.begin(), theta.data.end(), [](float v) { return !(v > 0.0f); })) {
        out.push_back({"codebook-range", "codebook_theta has nonpositive entries"});
      }
    }
    if (b.has_tensor("prompt_V") && b.has_tensor("category_tokens") && b.tensor("prompt_V").shape.size() == 2 &&
        b.tensor("category_tokens").shape.size() == 2 &&
        b.tensor("prompt_V").shape[1] != b.tensor("category_tokens").shape[1]) {
      out.push_back({"feature-width", "prompt_V and category_tokens have different token widths"});
    }
  } else if (kind == bundle_kind::kDepth || kind == bundle_kind::kGroundTruth) {
    require_tensor(b, "depth", 2, out);
  } else if (kind == bundle_kind::kTokens) {
    require_tensor(b, "category_tokens", 2, out);
    if (b.has_tensor("category_tokens") && b.tensor("category_tokens").shape.size() == 2) {
      check_labels(b, "category_labels", b.tensor("category_tokens").shape[0], "token rows", out);
    }
  } else {
    out.push_back({"unknown-kind", "unknown bundle kind '" + kind + "'"});
  }
  return out;
}

std::vector<Finding> validate_bundle(const std::filesystem::path& path, const std::string& kind) {
  try {
    return validate_bundle(read_bundle(path), kind);
  } catch (const BundleError& e) {
    return {Finding{to_string(e.kind()), e.what()}};
  } catch (const std::exception& e) {
    return {Finding{"error", path.string() + ": " + e.what()}};
  } catch (...) {
    return {Finding{"error", path.string() + ": unknown failure"}};
  }
}

namespace {

void expect_valid(const Bundle& b, const char* kind) {
  const auto findings = validate_bundle(b, kind);
  if (!findings.empty()) {
    throw BundleError(BundleErrorKind::kMissing, std::string(kind) + " bundle: " + findings.front().message);
  }
}

}  // namespace

Bundle make_image_bundle(const ImageFeatures& image) {
  image.patches.validate();
  if (image.scene_feature.size() != image.patches.width()) {
    throw DimensionError("image bundle: scene feature width " + std::to_string(image.scene_feature.size()) +
                         " != patch width " + std::to_string(image.patches.width()));
  }
  Bundle b;
  b.set_meta("kind", std::string(bundle_kind::kImage));
  b.set_meta("producer", std::string("fsdepth"));
  b.set_meta("src_h", std::int64_t{image.patches.src_h});
  b.set_meta("src_w", std::int64_t{image.patches.src_w});
  b.set_meta("patch_stride", std::int64_t{image.patches.stride});
  b.put_tensor("patch_features",
               {as_size(image.patches.grid_h), as_size(image.patches.grid_w), as_size(image.patches.width())},
               image.patches.features);
  b.put_tensor("scene_feature", {1, as_size(image.scene_feature.size())}, image.scene_feature);
  return b;
}

ImageFeatures image_from_bundle(const Bundle& b) {
  expect_valid(b, bundle_kind::kImage);
  const auto& shape = b.tensor("patch_features").shape;
  ImageFeatures img;
  img.patches.grid_h = static_cast<Eigen::Index>(shape[0]);
  img.patches.grid_w = static_cast<Eigen::Index>(shape[1]);
  img.patches.features = b.matrix("patch_features");
  img.patches.src_h = b.meta_int("src_h");
  img.patches.src_w = b.meta_int("src_w");
  img.patches.stride = b.meta_int("patch_stride");
  img.scene_feature = b.matrix("scene_feature");
  img.patches.validate();
  return img;
}

Bundle make_depth_bundle(const PixelDepthMap& depth, const char* kind) {
  Bundle b;
  b.set_meta("kind", std::string(kind));
  b.set_meta("producer", std::string("fsdepth"));
  b.put_tensor("depth", {as_size(depth.height()), as_size(depth.width())}, depth.depth);
  return b;
}

PixelDepthMap depth_from_bundle(const Bundle& b) {
  if (!b.has_tensor("depth") || b.tensor("depth").shape.size() != 2) {
    throw BundleError(BundleErrorKind::kMissing, "depth bundle needs a 2-D 'depth' tensor");
  }
  return PixelDepthMap{b.matrix("depth")};
}

Bundle make_scene_bank_bundle(const SceneFeatureBank& bank) {
  bank.validate();
  Bundle b;
  b.set_meta("kind", std::string(bundle_kind::kSceneBank));
  b.set_meta("producer", std::string("fsdepth"));
  b.set_meta_list("scene_labels", bank.labels);
  b.put_tensor("scene_features", {as_size(bank.size()), as_size(bank.width())}, bank.features);
  return b;
}

SceneFeatureBank scene_bank_from_bundle(const Bundle& b) {
  expect_valid(b, bundle_kind::kSceneBank);
  SceneFeatureBank bank{b.meta_list("scene_labels"), b.matrix("scene_features")};
  bank.validate();
  return bank;
}

Bundle make_tokens_bundle(const CategoryTokenSet& tokens) {
  tokens.validate();
  Bundle b;
  b.set_meta("kind", std::string(bundle_kind::kTokens));
  b.set_meta("producer", std::string("fsdepth"));
  b.set_meta_list("category_labels", tokens.labels);
  b.put_tensor("category_tokens", {as_size(tokens.size()), as_size(tokens.token_width())}, tokens.tokens);
  return b;
}

CategoryTokenSet tokens_from_bundle(const Bundle& b) {
  expect_valid(b, bundle_kind::kTokens);
  CategoryTokenSet set{b.meta_list("category_labels"), b.matrix("category_tokens")};
  set.validate();
  return set;
}

Bundle make_model_bundle(const ModelBundle& m) {
  Bundle b;
  b.set_meta("kind", std::string(bundle_kind::kModel));
  b.set_meta("producer", std::string("fsdepth"));
  b.set_meta_list("scene_labels", m.scene_labels);
  b.set_meta_list("category_labels", m.categories.labels);
  b.set_meta("encoder_seed", m.encoder_seed);
  b.set_meta("c_tok", std::int64_t{m.dims.token_width});
  b.set_meta("c_hidden", std::int64_t{m.dims.hidden});
  b.set_meta("c_embed", std::int64_t{m.dims.embed});
  b.set_meta("tau", m.config.tau);
  b.set_meta("max_depth", m.config.max_depth);
  b.set_meta("config.lr_prompt", m.config.lr_prompt);
  b.set_meta("config.lr_codebook", m.config.lr_codebook);
  b.set_meta("config.weight_decay", m.config.weight_decay);
  b.set_meta("config.codebook_weight_decay", m.config.codebook_weight_decay);
  b.set_meta("config.epochs", std::int64_t{m.config.epochs});
  b.set_meta("config.seed", m.config.seed);
  b.put_tensor("prompt_V", {as_size(m.prompt.length()), as_size(m.prompt.token_width())}, m.prompt.vectors);
  b.put_tensor("codebook_theta", {as_size(m.codebook.scenes()), as_size(m.codebook.categories())}, m.codebook.theta);
  b.put_tensor("category_tokens", {as_size(m.categories.size()), as_size(m.categories.token_width())},
               m.categories.tokens);
  if (!m.loss_history.empty()) {
    b.put_tensor("loss_history", {m.loss_history.size()},
                 Eigen::Map<const RowVector>(m.loss_history.data(), static_cast<Eigen::Index>(m.loss_history.size())));
  }
  return b;
}

ModelBundle model_from_bundle(const Bundle& b) {
  expect_valid(b, bundle_kind::kModel);
  ModelBundle m;
  m.prompt.vectors = b.matrix("prompt_V");
  m.codebook.theta = b.matrix("codebook_theta");
  m.categories = CategoryTokenSet{b.meta_list("category_labels"), b.matrix("category_tokens")};
  m.categories.validate();
  m.scene_labels = b.meta_list("scene_labels");
  m.encoder_seed = b.meta_u64("encoder_seed");
  m.dims = EncoderDims{b.meta_int("c_tok"), b.meta_int("c_hidden"), b.meta_int("c_embed")};
  m.config.tau = b.meta_double("tau");
  m.config.max_depth = b.meta_double("max_depth");
  if (b.find_meta("config.lr_prompt")) {
    m.config.lr_prompt = b.meta_double("config.lr_prompt");
    m.config.lr_codebook = b.meta_double("config.lr_codebook");
    m.config.weight_decay = b.meta_double("config.weight_decay");
    m.config.codebook_weight_decay = b.meta_double("config.codebook_weight_decay");
    m.config.epochs = static_cast<int>(b.meta_int("config.epochs"));
    m.config.seed = b.meta_u64("config.seed");
  }
  if (b.has_tensor("loss_history")) {
    const Matrix h = b.matrix("loss_history");
    m.loss_history.assign(h.data(), h.data() + h.size());
  }
  if (m.prompt.token_width() != m.dims.token_width) {
    throw BundleError(BundleErrorKind::kShapeMismatch, "prompt_V width does not match c_tok");
  }
  return m;
}

}  // namespace fsdepth
