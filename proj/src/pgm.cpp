#include "fsdepth/bundleio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace fsdepth {

std::string encode_pgm(const PixelDepthMap& depth, double max_depth) {
  if (!(max_depth > 0.0) || !std::isfinite(max_depth)) {
    throw ValidationError("export_pgm: max_depth must be positive, got " + std::to_string(max_depth));
  }
  char comment[64];
  std::snprintf(comment, sizeof(comment), "# max_depth=%.17g\n", max_depth);
  std::string out = "P5\n";
  out += comment;
  out += std::to_string(depth.width()) + " " + std::to_string(depth.height()) + "\n65535\n";
  out.reserve(out.size() + static_cast<std::size_t>(depth.depth.size()) * 2);
  for (Eigen::Index i = 0; i < depth.depth.size(); ++i) {
    const double scaled = std::round(depth.depth.data()[i] / max_depth * 65535.0);
    const auto v = static_cast<std::uint16_t>(std::isfinite(scaled) ? std::clamp(scaled, 0.0, 65535.0) : 0.0);
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

void export_pgm(const PixelDepthMap& depth, double max_depth, const std::filesystem::path& path) {
  write_file_atomic(path, encode_pgm(depth, max_depth));
}

PixelDepthMap GrayImage::to_depth() const {
  return PixelDepthMap{(pixels.cast<double>() / 65535.0 * max_depth).eval()};
}

GrayImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  GrayImage img;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        const std::size_t nl = bytes.find('\n', pos);
        const std::string_view line = bytes.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        constexpr std::string_view kTag = "# max_depth=";
        if (line.substr(0, kTag.size()) == kTag) img.max_depth = std::stod(std::string(line.substr(kTag.size())));
        pos = nl == std::string_view::npos ? bytes.size() : nl + 1;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  if (next_token() != "P5") throw ValidationError("pgm: not a binary graymap");
  const long w = std::stol(next_token());
  const long h = std::stol(next_token());
  const long maxval = std::stol(next_token());
  if (w < 0 || h < 0 || maxval != 65535) throw ValidationError("pgm: unsupported geometry or maxval");
  ++pos;  // single whitespace before raster
  if (bytes.size() - pos < static_cast<std::size_t>(w * h * 2)) throw ValidationError("pgm: truncated raster");
  img.pixels.resize(h, w);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
    const auto hi = static_cast<unsigned char>(bytes[pos + 2 * static_cast<std::size_t>(i)]);
    const auto lo = static_cast<unsigned char>(bytes[pos + 2 * static_cast<std::size_t>(i) + 1]);
    img.pixels.data()[i] = static_cast<std::uint16_t>((hi << 8) | lo);
  }
  return img;
}

}  // namespace fsdepth
