#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace psinet {

/// Row-major 2-D array.
template <class V>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<V> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, V fill = V{}) : height(h), width(w), values(h * w, fill) {}
  Grid(std::size_t h, std::size_t w, std::vector<V> v) : height(h), width(w), values(std::move(v)) {
    if (values.size() != h * w) throw std::invalid_argument("grid: value count does not match size");
  }

  V& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  const V& at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t size() const { return values.size(); }
  bool same_size(const auto& other) const {
    return height == other.height && width == other.width;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Per-pixel class index; 0 is background.
using Mask = Grid<std::uint8_t>;
/// Per-pixel class index of the dilated class boundaries; 0 is non-contour.
using ContourMap = Grid<std::uint8_t>;
/// Distance-to-foreground, normalized to [0,1].
using DistanceMap = Grid<double>;

/// Planar (C,H,W) image with intensities in [0,1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), values(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t r, std::size_t x) { return values[(c * height + r) * width + x]; }
  float at(std::size_t c, std::size_t r, std::size_t x) const {
    return values[(c * height + r) * width + x];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Pixels equal to `cls` become 1, everything else 0.
inline Mask binarize(const Mask& mask, std::uint8_t cls) {
  Mask out(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.size(); ++i) out.values[i] = mask.values[i] == cls ? 1 : 0;
  return out;
}

/// Union of all non-background classes.
inline Mask foreground(const Mask& mask) {
  Mask out(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.size(); ++i) out.values[i] = mask.values[i] != 0 ? 1 : 0;
  return out;
}

/// Throws if any label is >= num_classes.
inline void validate_labels(const Mask& mask, std::size_t num_classes) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.values[i] >= num_classes) {
      throw std::out_of_range("mask value " + std::to_string(mask.values[i]) + " at pixel (" +
                              std::to_string(i / mask.width) + "," +
                              std::to_string(i % mask.width) + ") is not below " +
                              std::to_string(num_classes) + " classes");
    }
  }
}

}  // namespace psinet
