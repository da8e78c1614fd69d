#pragma once

// Seeded synthetic segmentation data: grayscale images of filled, rotated
// ellipses over a noisy background, with exact class-index masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "psinet/grid.hpp"

namespace psinet {

struct SynthOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_instances = 1;
  std::size_t max_instances = 1;
  /// 2: ellipse = class 1. 3: each ellipse also carries a concentric inner
  /// ellipse of class 2 (nested anatomy such as cup within disc).
  std::size_t num_classes = 2;
  double min_axis_fraction = 0.10;  // semi-axis range as a fraction of min(height, width)
  double max_axis_fraction = 0.28;
  double noise_sigma = 0.05;

  void validate() const {
    if (min_instances < 1 || max_instances < min_instances) {
      throw std::invalid_argument("instance range must satisfy 1 <= min <= max");
    }
    if (num_classes != 2 && num_classes != 3) throw std::invalid_argument("synthetic data supports 2 or 3 classes");
    if (height < 8 || width < 8) throw std::invalid_argument("synthetic images must be at least 8x8");
    if (!(min_axis_fraction > 0 && max_axis_fraction >= min_axis_fraction)) {
      throw std::invalid_argument("bad axis fraction range");
    }
  }
};

struct SynthEllipse {
  double row, col, semi_a, semi_b, angle;

  bool contains(double r, double c, double scale = 1.0) const {
    const double dr = r - row, dc = c - col;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = (dc * ca + dr * sa) / (semi_a * scale);
    const double v = (-dc * sa + dr * ca) / (semi_b * scale);
    return u * u + v * v <= 1.0;
  }
  double outer_radius() const { return std::max(semi_a, semi_b); }
};

struct SynthSample {
  Image image;
  Mask mask;
  std::vector<SynthEllipse> instances;
};

/// Sample `index` of a dataset with the given seed. Samples are independent
/// of one another, so any index can be regenerated on its own.
inline SynthSample synth_sample(const SynthOptions& opt, std::uint64_t seed, std::uint64_t index) {
  opt.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double H = static_cast<double>(opt.height), W = static_cast<double>(opt.width);
  const double side = std::min(H, W);
  const auto count = static_cast<std::size_t>(
      std::uniform_int_distribution<std::size_t>(opt.min_instances, opt.max_instances)(rng));

  // Rejection-sample non-touching ellipses: bounding circles kept at least
  // three pixels apart so every instance is its own 8-connected component.
  std::vector<SynthEllipse> placed;
  int restarts = 0;
  for (int attempt = 0; placed.size() < count; ++attempt) {
    if (attempt > 10000) {
      if (++restarts > 100) {
        throw std::invalid_argument("cannot place " + std::to_string(count) + " separated instances in a " +
                                    std::to_string(opt.height) + "x" + std::to_string(opt.width) + " image");
      }
      placed.clear();
      attempt = 0;
    }
    double max_frac = opt.max_axis_fraction;
    if (count > 1) max_frac = std::max(opt.min_axis_fraction, max_frac / std::sqrt(static_cast<double>(count)));
    const double a = uniform(opt.min_axis_fraction, max_frac) * side;
    const double b = uniform(0.6, 1.0) * a;
    SynthEllipse e{0, 0, a, b, uniform(0.0, std::numbers::pi)};
    const double r = e.outer_radius();
    if (2 * r + 4 >= side) continue;
    e.row = uniform(r + 1, H - r - 2);
    e.col = uniform(r + 1, W - r - 2);
    bool clear = true;
    for (const auto& o : placed) {
      if (std::hypot(e.row - o.row, e.col - o.col) < r + o.outer_radius() + 3) clear = false;
    }
    if (clear) placed.push_back(e);
  }

  SynthSample s{Image(1, opt.height, opt.width), Mask(opt.height, opt.width), placed};
  const double background = uniform(0.10, 0.35);
  const double grad_r = uniform(-0.1, 0.1), grad_c = uniform(-0.1, 0.1);
  std::vector<double> level(placed.size()), inner_level(placed.size());
  for (std::size_t k = 0; k < placed.size(); ++k) {
    level[k] = uniform(0.55, 0.85);
    inner_level[k] = std::min(1.0, level[k] + uniform(0.1, 0.2));
  }
  std::normal_distribution<double> noise(0.0, opt.noise_sigma);
  for (std::size_t r = 0; r < opt.height; ++r) {
    for (std::size_t c = 0; c < opt.width; ++c) {
      double v = background + grad_r * (static_cast<double>(r) / H - 0.5) + grad_c * (static_cast<double>(c) / W - 0.5);
      std::uint8_t label = 0;
      for (std::size_t k = 0; k < placed.size(); ++k) {
        const auto& e = placed[k];
        if (!e.contains(static_cast<double>(r), static_cast<double>(c))) continue;
        label = 1;
        v = level[k];
        if (opt.num_classes == 3 && e.contains(static_cast<double>(r), static_cast<double>(c), 0.5)) {
          label = 2;
          v = inner_level[k];
        }
      }
      s.mask.at(r, c) = label;
      // Quantized to 8-bit levels so an image survives a PNG round trip unchanged.
      const double q = std::round(std::clamp(v + noise(rng), 0.0, 1.0) * 255.0);
      s.image.at(0, r, c) = static_cast<float>(q / 255.0);
    }
  }
  return s;
}

}  // namespace psinet
