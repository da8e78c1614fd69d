#pragma once

// Ground-truth derivation: contour maps (class boundaries dilated by a disk)
// and normalized Euclidean distance maps, plus input preprocessing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "psinet/grid.hpp"

namespace psinet {

struct Components {
  Grid<std::int32_t> labels;  // 0 = background, 1..count
  std::int32_t count = 0;
};

/// 8-connected labeling of the nonzero pixels. Labels are assigned in the
/// order components are first touched by a row-major scan.
inline Components connected_components(const Mask& binary) {
  Components out{Grid<std::int32_t>(binary.height, binary.width, 0), 0};
  const long H = static_cast<long>(binary.height), W = static_cast<long>(binary.width);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < binary.size(); ++start) {
    if (!binary.values[start] || out.labels.values[start]) continue;
    const std::int32_t label = ++out.count;
    out.labels.values[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const long r = static_cast<long>(p) / W, c = static_cast<long>(p) % W;
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          const long rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          const auto q = static_cast<std::size_t>(rr * W + cc);
          if (binary.values[q] && !out.labels.values[q]) {
            out.labels.values[q] = label;
            stack.push_back(q);
          }
        }
      }
    }
  }
  return out;
}

/// Foreground pixels with at least one background 4-neighbor; pixels outside
/// the image count as background.
inline Mask extract_boundary(const Mask& binary) {
  Mask out(binary.height, binary.width);
  const std::size_t H = binary.height, W = binary.width;
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      if (!binary.at(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r + 1 == H || c + 1 == W || !binary.at(r - 1, c) ||
                        !binary.at(r + 1, c) || !binary.at(r, c - 1) || !binary.at(r, c + 1);
      out.at(r, c) = edge ? 1 : 0;
    }
  }
  return out;
}

namespace detail {

inline constexpr std::int64_t kNoSite = std::numeric_limits<std::int64_t>::max();

// 1-D squared distance transform by lower envelope of parabolas rooted at the
// finite entries of f. Writes min_q ((p-q)^2 + f[q]) into d, or kNoSite.
inline void squared_edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d,
                           std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kNoSite) continue;
    if (!any) {
      any = true;
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      k = 0;
      continue;
    }
    const auto fq = static_cast<double>(f[q] + static_cast<std::int64_t>(q * q));
    auto intersect = [&](std::size_t p) {
      const auto fp = static_cast<double>(f[p] + static_cast<std::int64_t>(p * p));
      return (fq - fp) / (2.0 * static_cast<double>(q - p));
    };
    // z[0] is -inf, so this stops at k == 0 at the latest.
    double s = intersect(v[k]);
    while (s <= z[k]) s = intersect(v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (!any) {
    std::fill(d.begin(), d.end(), kNoSite);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const auto diff = static_cast<std::int64_t>(q) - static_cast<std::int64_t>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance from each pixel to the nearest nonzero
/// pixel; -1 everywhere when there is none. Two separable passes.
inline Grid<std::int64_t> squared_distance_transform(const Mask& binary) {
  const std::size_t H = binary.height, W = binary.width;
  Grid<std::int64_t> out(H, W, detail::kNoSite);
  const std::size_t n = std::max(H, W);
  std::vector<std::int64_t> f(n), d(n);
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  bool any = false;
  // Columns: distance to nearest site in the same column.
  f.resize(H);
  d.resize(H);
  for (std::size_t c = 0; c < W; ++c) {
    for (std::size_t r = 0; r < H; ++r) {
      f[r] = binary.at(r, c) ? 0 : detail::kNoSite;
      any = any || binary.at(r, c);
    }
    detail::squared_edt_1d(f, d, v, z);
    for (std::size_t r = 0; r < H; ++r) out.at(r, c) = d[r];
  }
  if (!any) return Grid<std::int64_t>(H, W, -1);
  // Rows.
  f.resize(W);
  d.resize(W);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) f[c] = out.at(r, c);
    detail::squared_edt_1d(f, d, v, z);
    for (std::size_t c = 0; c < W; ++c) out.at(r, c) = d[c];
  }
  return out;
}

/// Value used for every pixel when a mask has no foreground: the image diagonal.
inline double distance_sentinel(std::size_t height, std::size_t width) {
  return std::sqrt(static_cast<double>(height * height + width * width));
}

/// Euclidean distance from each pixel to the nearest foreground pixel (0 on
/// foreground). A mask without foreground maps to distance_sentinel().
inline Grid<double> distance_transform(const Mask& binary) {
  const auto sq = squared_distance_transform(binary);
  Grid<double> out(binary.height, binary.width);
  if (!sq.values.empty() && sq.values[0] < 0) {
    std::fill(out.values.begin(), out.values.end(), distance_sentinel(binary.height, binary.width));
    return out;
  }
  for (std::size_t i = 0; i < sq.size(); ++i) out.values[i] = std::sqrt(static_cast<double>(sq.values[i]));
  return out;
}

/// Pixels within Euclidean distance `radius` of some nonzero pixel.
inline Mask dilate_disk(const Mask& binary, double radius) {
  if (radius < 0) throw std::invalid_argument("dilate_disk: negative radius");
  const auto sq = squared_distance_transform(binary);
  const double r2 = radius * radius;
  Mask out(binary.height, binary.width);
  for (std::size_t i = 0; i < sq.size(); ++i) {
    out.values[i] = (sq.values[i] >= 0 && static_cast<double>(sq.values[i]) <= r2) ? 1 : 0;
  }
  return out;
}

enum class DistanceScaling { kPerImageMax, kFixedDivisor };

struct DistanceNormalization {
  DistanceScaling scaling = DistanceScaling::kPerImageMax;
  double divisor = 1.0;  // used by kFixedDivisor; results are clamped to 1
};

inline DistanceMap normalize_distance(const Grid<double>& raw, DistanceNormalization norm = {}) {
  DistanceMap out = raw;
  if (norm.scaling == DistanceScaling::kFixedDivisor) {
    if (!(norm.divisor > 0)) throw std::invalid_argument("normalize_distance: divisor must be > 0");
    for (auto& v : out.values) v = std::min(1.0, v / norm.divisor);
    return out;
  }
  const double mx = raw.values.empty() ? 0.0 : *std::max_element(raw.values.begin(), raw.values.end());
  if (mx > 0) {
    for (auto& v : out.values) v /= mx;
  }
  return out;
}

inline constexpr double kContourRadius = 5.0;

struct TargetOptions {
  double contour_radius = kContourRadius;
  DistanceNormalization distance;
};

struct Targets {
  ContourMap contour;
  DistanceMap distance;
};

/// Contour map: per non-background class, boundary then disk dilation, with
/// higher class indices painted last. Distance map: EDT of the union of all
/// foreground classes, normalized.
inline Targets derive_targets(const Mask& mask, std::size_t num_classes,
                              const TargetOptions& options = {}) {
  validate_labels(mask, num_classes);
  Targets t{ContourMap(mask.height, mask.width, 0), {}};
  for (std::size_t cls = 1; cls < num_classes; ++cls) {
    const Mask region = binarize(mask, static_cast<std::uint8_t>(cls));
    const Mask band = dilate_disk(extract_boundary(region), options.contour_radius);
    for (std::size_t i = 0; i < band.size(); ++i) {
      if (band.values[i]) t.contour.values[i] = static_cast<std::uint8_t>(cls);
    }
  }
  t.distance = normalize_distance(distance_transform(foreground(mask)), options.distance);
  return t;
}

// ---------------------------------------------------------------------------
// Preprocessing: center crop to the largest centered square, then resize.

struct CropWindow {
  std::size_t row0, col0, side;
};

inline CropWindow center_square(std::size_t height, std::size_t width) {
  const std::size_t side = std::min(height, width);
  return {(height - side) / 2, (width - side) / 2, side};
}

inline Image preprocess(const Image& image, std::size_t target_height, std::size_t target_width) {
  if (image.height == 0 || image.width == 0) throw std::invalid_argument("preprocess: empty image");
  const auto crop = center_square(image.height, image.width);
  Image out(image.channels, target_height, target_width);
  auto axis = [](std::size_t out_i, std::size_t in_n, std::size_t out_n) {
    double s = (static_cast<double>(out_i) + 0.5) * static_cast<double>(in_n) /
                   static_cast<double>(out_n) -
               0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
    const auto i0 = static_cast<std::size_t>(s);
    const std::size_t i1 = std::min(i0 + 1, in_n - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t r = 0; r < target_height; ++r) {
    const auto [r0, r1, fr] = axis(r, crop.side, target_height);
    for (std::size_t c = 0; c < target_width; ++c) {
      const auto [c0, c1, fc] = axis(c, crop.side, target_width);
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        auto px = [&](std::size_t rr, std::size_t cc) {
          return static_cast<double>(image.at(ch, crop.row0 + rr, crop.col0 + cc));
        };
        const double top = (1 - fc) * px(r0, c0) + fc * px(r0, c1);
        const double bot = (1 - fc) * px(r1, c0) + fc * px(r1, c1);
        out.at(ch, r, c) = static_cast<float>((1 - fr) * top + fr * bot);
      }
    }
  }
  return out;
}

/// Nearest-neighbor counterpart of preprocess() for label images.
template <class V>
Grid<V> preprocess_labels(const Grid<V>& labels, std::size_t target_height, std::size_t target_width) {
  if (labels.height == 0 || labels.width == 0) throw std::invalid_argument("preprocess: empty mask");
  const auto crop = center_square(labels.height, labels.width);
  Grid<V> out(target_height, target_width);
  auto nearest = [&](std::size_t i, std::size_t out_n) {
    const auto s = static_cast<std::size_t>((static_cast<double>(i) + 0.5) *
                                            static_cast<double>(crop.side) / static_cast<double>(out_n));
    return std::min(s, crop.side - 1);
  };
  for (std::size_t r = 0; r < target_height; ++r) {
    const std::size_t sr = crop.row0 + nearest(r, target_height);
    for (std::size_t c = 0; c < target_width; ++c) {
      out.at(r, c) = labels.at(sr, crop.col0 + nearest(c, target_width));
    }
  }
  return out;
}

}  // namespace psinet
