#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scatsynth/audio_io.hpp"
#include "scatsynth/error.hpp"
#include "scatsynth/scattering.hpp"

namespace scatsynth {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

/// "Ember" colormap: piecewise-linear through
///   0.00 (0,0,4)  0.25 (70,12,110)  0.50 (190,45,115)  0.75 (250,150,120)  1.00 (255,250,230).
/// Every channel is non-decreasing, so luminance is monotone in the level.
/// Levels outside [0, 1] are clamped.
inline Rgb colormap(double level) {
  static constexpr std::array<std::array<double, 3>, 5> stops = {{
      {0, 0, 4}, {70, 12, 110}, {190, 45, 115}, {250, 150, 120}, {255, 250, 230}}};
  const double v = std::clamp(std::isfinite(level) ? level : 0.0, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(v), 3);
  const double w = v - static_cast<double>(i);
  auto channel = [&](int c) {
    return static_cast<std::uint8_t>(std::lround(stops[i][c] + w * (stops[i + 1][c] - stops[i][c])));
  };
  return {channel(0), channel(1), channel(2)};
}

/// 8-bit RGB raster, rows top to bottom.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Rgb pixel(std::size_t x, std::size_t y) const {
    const std::size_t i = 3 * (y * width + x);
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
};

struct RenderOptions {
  std::size_t max_width = 2048;
  double dynamic_range_db = 80.0;
};

/// One row per band with the highest band on top, one column per pooled
/// block of time frames (max-pooling keeps transients visible). Amplitudes are
/// divided by the image maximum, converted to dB, and the top
/// `dynamic_range_db` decibels are spread over the colormap.
inline Image render_scalogram_image(const Scalogram& scal, const RenderOptions& opts = {}) {
  require(scal.bands > 0 && scal.length > 0 && scal.values.size() == scal.bands * scal.length,
          ErrorCode::InvalidArgument, "cannot render an empty scalogram");
  require(opts.max_width > 0 && opts.dynamic_range_db > 0.0, ErrorCode::InvalidArgument,
          "render width and dynamic range must be positive");
  const std::size_t pool = (scal.length + opts.max_width - 1) / opts.max_width;
  Image img;
  img.width = (scal.length + pool - 1) / pool;
  img.height = scal.bands;
  img.rgb.resize(img.width * img.height * 3);

  std::vector<double> pooled(img.width * img.height, 0.0);
  for (std::size_t b = 0; b < scal.bands; ++b) {
    const std::size_t y = scal.bands - 1 - b;
    for (std::size_t t = 0; t < scal.length; ++t) {
      double& cell = pooled[y * img.width + t / pool];
      cell = std::max(cell, scal.at(b, t));
    }
  }
  const double peak = *std::max_element(pooled.begin(), pooled.end());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    double level = 0.0;
    if (peak > 0.0 && pooled[i] > 0.0) {
      level = 1.0 + 20.0 * std::log10(pooled[i] / peak) / opts.dynamic_range_db;
    }
    const Rgb c = colormap(level);
    img.rgb[3 * i] = c.r;
    img.rgb[3 * i + 1] = c.g;
    img.rgb[3 * i + 2] = c.b;
  }
  return img;
}

namespace detail {

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xff));
}

inline void png_chunk(std::vector<unsigned char>& out, const char* type,
                      const std::vector<unsigned char>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Truecolour 8-bit PNG, unfiltered rows, deflated with zlib.
inline std::vector<unsigned char> encode_png(const Image& img) {
  require(img.width > 0 && img.height > 0 && img.rgb.size() == img.width * img.height * 3,
          ErrorCode::InvalidArgument, "malformed image");
  std::vector<unsigned char> raw;
  raw.reserve(img.height * (1 + 3 * img.width));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.rgb.begin() + static_cast<long>(3 * y * img.width),
               img.rgb.begin() + static_cast<long>(3 * (y + 1) * img.width));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> packed(packed_size);
  require(compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 6) == Z_OK,
          ErrorCode::IoError, "zlib compression failed");
  packed.resize(packed_size);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> header;
  detail::put_be32(header, static_cast<std::uint32_t>(img.width));
  detail::put_be32(header, static_cast<std::uint32_t>(img.height));
  header.insert(header.end(), {8, 2, 0, 0, 0});
  detail::png_chunk(out, "IHDR", header);
  detail::png_chunk(out, "IDAT", packed);
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::string& path, const Image& img) {
  write_file_bytes(path, encode_png(img));
}

inline void render_scalogram(const Scalogram& scal, const std::string& path,
                             const RenderOptions& opts = {}) {
  write_png(path, render_scalogram_image(scal, opts));
}

}  // namespace scatsynth
