#pragma once

// Brute-force reference implementations used only by tests. Each one takes
// the most direct route to its definition and shares no code with the
// library path it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "psinet/grid.hpp"

namespace psinet::oracle {

/// Direct sliding-window 3x3 convolution, padding 1, single image.
inline std::vector<double> conv3x3(const std::vector<double>& in, std::size_t cin, std::size_t h, std::size_t w,
                                   const std::vector<double>& weight, const std::vector<double>& bias,
                                   std::size_t cout) {
  std::vector<double> out(cout * h * w);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(y) + ky - 1, ix = static_cast<long>(x) + kx - 1;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              s += weight[((co * cin + ci) * 3 + ky) * 3 + kx] * in[(ci * h + iy) * w + ix];
            }
        out[(co * h + y) * w + x] = s;
      }
  return out;
}

/// Nearest-foreground Euclidean distance by scanning every foreground pixel.
inline Grid<double> distance_transform(const Mask& m) {
  Grid<double> out(m.height, m.width, 0.0);
  std::vector<std::pair<long, long>> fg;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c)
      if (m.at(r, c)) fg.emplace_back(r, c);
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) {
      if (fg.empty()) {
        out.at(r, c) = std::sqrt(static_cast<double>(m.height * m.height + m.width * m.width));
        continue;
      }
      long best = std::numeric_limits<long>::max();
      for (auto [fr, fc] : fg) {
        const long dr = fr - static_cast<long>(r), dc = fc - static_cast<long>(c);
        best = std::min(best, dr * dr + dc * dc);
      }
      out.at(r, c) = std::sqrt(static_cast<double>(best));
    }
  return out;
}

/// Disk dilation by enumerating offsets with dx^2 + dy^2 <= r^2 around every set pixel.
inline Mask dilate_disk(const Mask& m, int radius) {
  Mask out(m.height, m.width);
  for (long r = 0; r < static_cast<long>(m.height); ++r)
    for (long c = 0; c < static_cast<long>(m.width); ++c) {
      if (!m.at(r, c)) continue;
      for (long dr = -radius; dr <= radius; ++dr)
        for (long dc = -radius; dc <= radius; ++dc) {
          if (dr * dr + dc * dc > radius * radius) continue;
          const long rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(m.height) || cc >= static_cast<long>(m.width)) continue;
          out.at(rr, cc) = 1;
        }
    }
  return out;
}

/// Number of 8-connected components via union-find.
inline int count_components(const Mask& m) {
  const std::size_t n = m.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) {
      if (!m.at(r, c)) continue;
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(m.height) || cc >= static_cast<long>(m.width)) continue;
          if (m.at(rr, cc)) parent[find(r * m.width + c)] = find(rr * m.width + cc);
        }
    }
  int k = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (m.values[i] && find(i) == i) ++k;
  return k;
}

struct Counts {
  std::size_t a = 0, b = 0, both = 0;
};

inline Counts count(const Mask& a, const Mask& b) {
  Counts k;
  for (std::size_t i = 0; i < a.size(); ++i) {
    k.a += a.values[i] != 0;
    k.b += b.values[i] != 0;
    k.both += a.values[i] && b.values[i];
  }
  return k;
}

inline double dice(const Mask& a, const Mask& b) {
  const auto k = count(a, b);
  return k.a + k.b == 0 ? 1.0 : 2.0 * static_cast<double>(k.both) / static_cast<double>(k.a + k.b);
}

inline double jaccard(const Mask& a, const Mask& b) {
  const auto k = count(a, b);
  const std::size_t u = k.a + k.b - k.both;
  return u == 0 ? 1.0 : static_cast<double>(k.both) / static_cast<double>(u);
}

/// Boundary by the 4-neighbor rule, written independently of the library.
inline Mask boundary(const Mask& m) {
  Mask out(m.height, m.width);
  auto fg = [&](long r, long c) {
    return r >= 0 && c >= 0 && r < static_cast<long>(m.height) && c < static_cast<long>(m.width) && m.at(r, c);
  };
  for (long r = 0; r < static_cast<long>(m.height); ++r)
    for (long c = 0; c < static_cast<long>(m.width); ++c)
      if (fg(r, c) && (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1))) out.at(r, c) = 1;
  return out;
}

/// sup-inf over all pixel pairs, both directions.
inline std::optional<double> hausdorff(const Mask& a, const Mask& b) {
  std::vector<std::pair<long, long>> pa, pb;
  for (std::size_t r = 0; r < a.height; ++r)
    for (std::size_t c = 0; c < a.width; ++c) {
      if (a.at(r, c)) pa.emplace_back(r, c);
      if (b.at(r, c)) pb.emplace_back(r, c);
    }
  if (pa.empty() || pb.empty()) return std::nullopt;
  auto directed = [](const auto& from, const auto& to) {
    long worst = 0;
    for (auto [r, c] : from) {
      long best = std::numeric_limits<long>::max();
      for (auto [r2, c2] : to) best = std::min(best, (r - r2) * (r - r2) + (c - c2) * (c - c2));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(static_cast<double>(std::max(directed(pa, pb), directed(pb, pa))));
}

/// Trimap error by scanning, for every pixel, all ground-truth boundary pixels.
inline std::optional<double> trimap(const Mask& pred, const Mask& gt, std::size_t width) {
  const Mask bd = boundary(gt);
  std::vector<std::pair<long, long>> pts;
  for (std::size_t r = 0; r < gt.height; ++r)
    for (std::size_t c = 0; c < gt.width; ++c)
      if (bd.at(r, c)) pts.emplace_back(r, c);
  if (pts.empty()) return std::nullopt;
  std::size_t band = 0, wrong = 0;
  const long w2 = static_cast<long>(width * width);
  for (long r = 0; r < static_cast<long>(gt.height); ++r)
    for (long c = 0; c < static_cast<long>(gt.width); ++c) {
      bool in = false;
      for (auto [br, bc] : pts) in = in || (br - r) * (br - r) + (bc - c) * (bc - c) <= w2;
      if (!in) continue;
      ++band;
      wrong += (pred.at(r, c) != 0) != (gt.at(r, c) != 0);
    }
  return static_cast<double>(wrong) / static_cast<double>(band);
}

/// Random binary mask with roughly `density` foreground, or sparse blobs.
inline Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double density) {
  Mask m(h, w);
  std::bernoulli_distribution on(density);
  for (auto& v : m.values) v = on(rng) ? 1 : 0;
  return m;
}

/// Random mask made of a few filled rectangles; more structured than noise.
inline Mask random_blobs(std::mt19937_64& rng, std::size_t h, std::size_t w, int count) {
  Mask m(h, w);
  std::uniform_int_distribution<std::size_t> rr(0, h - 1), cc(0, w - 1);
  for (int k = 0; k < count; ++k) {
    std::size_t r0 = rr(rng), r1 = rr(rng), c0 = cc(rng), c1 = cc(rng);
    if (r0 > r1) std::swap(r0, r1);
    if (c0 > c1) std::swap(c0, c1);
    for (std::size_t r = r0; r <= r1; ++r)
      for (std::size_t c = c0; c <= c1; ++c) m.at(r, c) = 1;
  }
  return m;
}

}  // namespace psinet::oracle
