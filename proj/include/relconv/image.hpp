#pragma once

// Netpbm I/O and the resize / center-crop / normalize preprocessing chain.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "relconv/error.hpp"
#include "relconv/metrics.hpp"
#include "relconv/tensor.hpp"

namespace relconv {

/// Decoded image, interleaved row-major (y, x, channel), values in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
};

namespace detail {

inline std::size_t pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      tok.push_back(ch);
      break;
    }
  }
  while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) tok.push_back(ch);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw IoError("malformed header in " + path);
  return std::stoul(tok);
}

}  // namespace detail

/// Reads binary PGM (P5) or PPM (P6), 8 or 16 bit.
inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw IoError("not a binary PGM/PPM file: " + path.string());
  const std::size_t channels = magic[1] == '5' ? 1 : 3;
  const std::size_t w = detail::pnm_token(in, path.string());
  const std::size_t h = detail::pnm_token(in, path.string());
  const std::size_t maxval = detail::pnm_token(in, path.string());
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw IoError("bad dimensions in " + path.string());

  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * channels * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError("truncated image data in " + path.string());

  Image img(w, h, channels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::size_t v = bytes == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Writes 8-bit P5 (1 channel) or P6 (3 channels).
inline void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("cannot encode " + std::to_string(img.channels) + " channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(img.pixels[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

/// Writes an 8-bit grayscale map given as integers in [0, 255].
inline void write_pgm_u8(const std::filesystem::path& path, std::size_t w, std::size_t h,
                         const std::vector<std::uint8_t>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

/// Resize side that keeps the 256:224 resize-to-crop ratio: ceil(target * 256 / 224).
inline constexpr std::size_t resize_side(std::size_t target) { return (target * 256 + 223) / 224; }

inline constexpr std::size_t crop_offset(std::size_t target) { return (resize_side(target) - target) / 2; }

/// Bilinear resize with half-pixel centers and edge clamping.
inline Image resize_bilinear(const Image& src, std::size_t out_w, std::size_t out_h) {
  Image dst(out_w, out_h, src.channels);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(x0, y0, c) * (1 - wx) + src.at(x1, y0, c) * wx;
        const double bottom = src.at(x0, y1, c) * (1 - wx) + src.at(x1, y1, c) * wx;
        dst.at(x, y, c) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return dst;
}

/// Resize to resize_side(target), center crop to target x target, replicate
/// grayscale to three channels and standardize with ImageNet statistics.
/// Returns a (3, target, target) tensor.
template <typename T>
Tensor<T> preprocess_image(const Image& raw, std::size_t target) {
  if (target == 0) throw ConfigError("preprocess target must be positive");
  if (raw.channels != 1 && raw.channels != 3)
    throw IoError("expected 1 or 3 channels, got " + std::to_string(raw.channels));
  const std::size_t side = resize_side(target);
  const std::size_t off = crop_offset(target);
  const Image resized = resize_bilinear(raw, side, side);
  Tensor<T> out(Shape{3, target, target});
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = raw.channels == 1 ? 0 : c;
    for (std::size_t y = 0; y < target; ++y)
      for (std::size_t x = 0; x < target; ++x)
        out(c, y, x) = static_cast<T>((resized.at(x + off, y + off, src_c) - kImageNetMean[c]) / kImageNetStd[c]);
  }
  return out;
}

/// Maps a box in original pixel coordinates through the same resize and
/// crop as the pixels. Returns nullopt if nothing is left inside the crop.
inline std::optional<Bbox> map_box_to_preprocessed(const Bbox& box, std::size_t orig_w, std::size_t orig_h,
                                                   std::size_t target) {
  const double side = static_cast<double>(resize_side(target));
  const double off = static_cast<double>(crop_offset(target));
  const double sx = side / static_cast<double>(orig_w), sy = side / static_cast<double>(orig_h);
  const double t = static_cast<double>(target);
  Bbox m{std::clamp(box.x_min * sx - off, 0.0, t), std::clamp(box.y_min * sy - off, 0.0, t),
         std::clamp(box.x_max * sx - off, 0.0, t), std::clamp(box.y_max * sy - off, 0.0, t)};
  if (!m.valid()) return std::nullopt;
  return m;
}

}  // namespace relconv
