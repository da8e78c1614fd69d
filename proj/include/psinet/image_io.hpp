#pragma once

// PNG reading and writing (libpng).
//
// Images: 8- or 16-bit gray / RGB (alpha dropped, palettes expanded), read as
// intensities in [0,1]. Masks and contour maps: 8-bit single-channel, pixel
// value = class index (palette images are read by index). Distance maps:
// 16-bit gray storing round(value * 65535).

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "psinet/grid.hpp"

namespace psinet {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngError {
  char message[256] = "libpng error";
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(err->message, sizeof err->message, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

/// Raw decoded samples: rows * cols * channels, each 0..(2^depth - 1).
struct RawPng {
  std::size_t width = 0, height = 0, channels = 0;
  int bit_depth = 8;
  bool palette = false;
  std::vector<std::uint16_t> samples;
};

// Reads the file with the requested transforms. In `labels` mode palette
// indices and low-bit gray values are kept as raw integers.
inline RawPng read_png_raw(const std::filesystem::path& path, bool labels) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageIoError(path.string() + ": not a PNG file");
  }
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw ImageIoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  RawPng out;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError(path.string() + ": " + err.message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  out.palette = color == PNG_COLOR_TYPE_PALETTE;
  if (out.palette && !labels) png_set_palette_to_rgb(png);
  if (depth < 8) {
    if (labels) {
      png_set_packing(png);
    } else if (color == PNG_COLOR_TYPE_GRAY) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // native little-endian uint16 samples
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  out.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (std::size_t r = 0; r < out.height; ++r) rows[r] = buffer.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = out.width * out.height * out.channels;
  out.samples.resize(n);
  if (depth == 16) {
    for (std::size_t r = 0; r < out.height; ++r) {
      const auto* src = reinterpret_cast<const std::uint16_t*>(rows[r]);
      for (std::size_t i = 0; i < out.width * out.channels; ++i) out.samples[r * out.width * out.channels + i] = src[i];
    }
  } else {
    for (std::size_t r = 0; r < out.height; ++r) {
      for (std::size_t i = 0; i < out.width * out.channels; ++i) out.samples[r * out.width * out.channels + i] = rows[r][i];
    }
  }
  return out;
}

inline void write_png_raw(const std::filesystem::path& path, std::size_t width, std::size_t height,
                          int color_type, int bit_depth, const std::vector<std::uint8_t>& bytes) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageIoError("cannot write " + path.string());
  PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw ImageIoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  const std::size_t channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t rowbytes = width * channels * static_cast<std::size_t>(bit_depth / 8);
  std::vector<png_bytep> rows(height);
  for (std::size_t r = 0; r < height; ++r) rows[r] = const_cast<png_bytep>(bytes.data() + r * rowbytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError(path.string() + ": " + err.message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline Image read_image(const std::filesystem::path& path) {
  const auto raw = detail::read_png_raw(path, false);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  Image im(raw.channels, raw.height, raw.width);
  for (std::size_t r = 0; r < raw.height; ++r) {
    for (std::size_t c = 0; c < raw.width; ++c) {
      for (std::size_t ch = 0; ch < raw.channels; ++ch) {
        im.at(ch, r, c) =
            static_cast<float>(raw.samples[(r * raw.width + c) * raw.channels + ch] / scale);
      }
    }
  }
  return im;
}

/// Writes 8-bit gray (1 channel) or RGB (3 channels).
inline void write_image(const std::filesystem::path& path, const Image& im) {
  if (im.channels != 1 && im.channels != 3) throw ImageIoError("write_image: need 1 or 3 channels");
  std::vector<std::uint8_t> bytes(im.height * im.width * im.channels);
  for (std::size_t r = 0; r < im.height; ++r) {
    for (std::size_t c = 0; c < im.width; ++c) {
      for (std::size_t ch = 0; ch < im.channels; ++ch) {
        const double v = std::clamp(static_cast<double>(im.at(ch, r, c)), 0.0, 1.0);
        bytes[(r * im.width + c) * im.channels + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  detail::write_png_raw(path, im.width, im.height, im.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                        8, bytes);
}

/// Class-index image; must be 8-bit single-channel (gray or palette).
inline Mask read_mask(const std::filesystem::path& path) {
  const auto raw = detail::read_png_raw(path, true);
  if (raw.channels != 1 || raw.bit_depth != 8) {
    throw ImageIoError(path.string() + ": label images must be 8-bit single-channel, got " +
                       std::to_string(raw.channels) + " channel(s) at " + std::to_string(raw.bit_depth) +
                       " bits");
  }
  Mask m(raw.height, raw.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = static_cast<std::uint8_t>(raw.samples[i]);
  return m;
}

inline void write_mask(const std::filesystem::path& path, const Mask& mask) {
  detail::write_png_raw(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 8, mask.values);
}

inline constexpr double kDistanceFixedPointScale = 65535.0;

/// 16-bit gray, round(value * 65535) with values clamped to [0,1].
inline void write_distance(const std::filesystem::path& path, const Grid<double>& dist) {
  std::vector<std::uint8_t> bytes(dist.size() * 2);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const auto q = static_cast<std::uint16_t>(
        std::lround(std::clamp(dist.values[i], 0.0, 1.0) * kDistanceFixedPointScale));
    bytes[2 * i] = static_cast<std::uint8_t>(q >> 8);  // PNG samples are big-endian
    bytes[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  detail::write_png_raw(path, dist.width, dist.height, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

inline DistanceMap read_distance(const std::filesystem::path& path) {
  const auto raw = detail::read_png_raw(path, false);
  if (raw.channels != 1 || raw.bit_depth != 16) {
    throw ImageIoError(path.string() + ": distance maps must be 16-bit single-channel");
  }
  DistanceMap d(raw.height, raw.width);
  for (std::size_t i = 0; i < d.size(); ++i) d.values[i] = raw.samples[i] / kDistanceFixedPointScale;
  return d;
}

}  // namespace psinet
