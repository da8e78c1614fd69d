#pragma once

// Evaluation: Dice, Jaccard, Hausdorff (boundary sets), trimap boundary
// error, and moment-based ellipse fitting of predicted masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "psinet/targets.hpp"

namespace psinet {

struct Pixel {
  std::int32_t row = 0;
  std::int32_t col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Sorted, duplicate-free set of pixel coordinates.
class PixelSet {
 public:
  PixelSet() = default;
  explicit PixelSet(std::vector<Pixel> pixels) : pixels_(std::move(pixels)) {
    std::sort(pixels_.begin(), pixels_.end());
    pixels_.erase(std::unique(pixels_.begin(), pixels_.end()), pixels_.end());
  }

  /// Pixels of `mask` whose value is nonzero.
  static PixelSet from_binary(const Mask& mask) {
    PixelSet s;
    for (std::size_t r = 0; r < mask.height; ++r) {
      for (std::size_t c = 0; c < mask.width; ++c) {
        if (mask.at(r, c)) s.pixels_.push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)});
      }
    }
    return s;  // row-major scan is already sorted
  }

  const std::vector<Pixel>& pixels() const { return pixels_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  std::size_t intersection_size(const PixelSet& other) const {
    std::size_t n = 0;
    auto a = pixels_.begin(), b = other.pixels_.begin();
    while (a != pixels_.end() && b != other.pixels_.end()) {
      if (*a < *b) {
        ++a;
      } else if (*b < *a) {
        ++b;
      } else {
        ++n, ++a, ++b;
      }
    }
    return n;
  }

 private:
  std::vector<Pixel> pixels_;
};

/// |A n B| / |A u B|; 1 when both are empty.
inline double jaccard(const PixelSet& a, const PixelSet& b) {
  const std::size_t inter = a.intersection_size(b);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
inline double dice(const PixelSet& a, const PixelSet& b) {
  const std::size_t denom = a.size() + b.size();
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(a.intersection_size(b)) / static_cast<double>(denom);
}

/// Symmetric Hausdorff distance with the Euclidean pixel metric. Computed
/// exactly through squared distance transforms over the joint bounding box.
/// Empty input on either side is undefined (nullopt).
inline std::optional<double> hausdorff(const PixelSet& a, const PixelSet& b) {
  if (a.empty() || b.empty()) return std::nullopt;
  std::int32_t r0 = a.pixels()[0].row, r1 = r0, c0 = a.pixels()[0].col, c1 = c0;
  for (const auto* s : {&a, &b}) {
    for (const Pixel& p : s->pixels()) {
      r0 = std::min(r0, p.row), r1 = std::max(r1, p.row);
      c0 = std::min(c0, p.col), c1 = std::max(c1, p.col);
    }
  }
  const auto H = static_cast<std::size_t>(r1 - r0 + 1), W = static_cast<std::size_t>(c1 - c0 + 1);
  auto raster = [&](const PixelSet& s) {
    Mask m(H, W);
    for (const Pixel& p : s.pixels()) m.at(static_cast<std::size_t>(p.row - r0), static_cast<std::size_t>(p.col - c0)) = 1;
    return m;
  };
  auto directed = [&](const PixelSet& from, const Grid<std::int64_t>& to_sq) {
    std::int64_t worst = 0;
    for (const Pixel& p : from.pixels()) {
      worst = std::max(worst, to_sq.at(static_cast<std::size_t>(p.row - r0), static_cast<std::size_t>(p.col - c0)));
    }
    return worst;
  };
  const auto sq_a = squared_distance_transform(raster(a));
  const auto sq_b = squared_distance_transform(raster(b));
  return std::sqrt(static_cast<double>(std::max(directed(a, sq_b), directed(b, sq_a))));
}

inline const std::vector<std::size_t>& default_trimap_widths() {
  static const std::vector<std::size_t> widths{1, 2, 3, 5, 8, 12};
  return widths;
}

struct TrimapPoint {
  std::size_t width = 0;
  std::optional<double> error_fraction;  // nullopt when the ground truth has no boundary
};

/// Fraction of misclassified pixels within `width` (Euclidean) of the
/// ground-truth boundary, per width. Masks are read as binary (nonzero =
/// foreground); a pixel is misclassified when pred and gt membership differ.
inline std::vector<TrimapPoint> trimap_error(const Mask& pred, const Mask& gt,
                                             const std::vector<std::size_t>& widths) {
  if (!pred.same_size(gt)) throw std::invalid_argument("trimap_error: mask sizes differ");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == 0 || (i && widths[i] <= widths[i - 1])) {
      throw std::invalid_argument("trimap_error: widths must be positive and ascending");
    }
  }
  const Mask gt_bin = foreground(gt);
  const auto sq = squared_distance_transform(extract_boundary(gt_bin));
  std::vector<TrimapPoint> out;
  for (std::size_t w : widths) {
    TrimapPoint pt{w, std::nullopt};
    if (sq.size() && sq.values[0] >= 0) {
      const auto w2 = static_cast<std::int64_t>(w * w);
      std::size_t band = 0, wrong = 0;
      for (std::size_t i = 0; i < sq.size(); ++i) {
        if (sq.values[i] > w2) continue;
        ++band;
        if ((pred.values[i] != 0) != (gt_bin.values[i] != 0)) ++wrong;
      }
      pt.error_fraction = static_cast<double>(wrong) / static_cast<double>(band);
    }
    out.push_back(pt);
  }
  return out;
}

struct EllipseFit {
  Mask mask;
  bool empty_input = false;
  double center_row = 0, center_col = 0;
  double semi_major = 0, semi_minor = 0;
  double angle = 0;  // major axis direction, radians from the +col axis toward +row
};

/// Replaces the foreground by the ellipse with the same area centroid and
/// second-order central moments. Pixels are treated as unit squares, so each
/// axis variance gets +1/12 before conversion to semi-axes (variance of a
/// filled ellipse along an axis is semi_axis^2 / 4).
inline EllipseFit ellipse_fit(const Mask& binary) {
  EllipseFit fit;
  fit.mask = Mask(binary.height, binary.width);
  double n = 0, sr = 0, sc = 0;
  for (std::size_t r = 0; r < binary.height; ++r) {
    for (std::size_t c = 0; c < binary.width; ++c) {
      if (!binary.at(r, c)) continue;
      n += 1, sr += static_cast<double>(r), sc += static_cast<double>(c);
    }
  }
  if (n == 0) {
    fit.empty_input = true;
    return fit;
  }
  fit.center_row = sr / n;
  fit.center_col = sc / n;
  double mrr = 0, mcc = 0, mrc = 0;
  for (std::size_t r = 0; r < binary.height; ++r) {
    for (std::size_t c = 0; c < binary.width; ++c) {
      if (!binary.at(r, c)) continue;
      const double dr = static_cast<double>(r) - fit.center_row;
      const double dc = static_cast<double>(c) - fit.center_col;
      mrr += dr * dr, mcc += dc * dc, mrc += dr * dc;
    }
  }
  mrr = mrr / n + 1.0 / 12, mcc = mcc / n + 1.0 / 12, mrc /= n;
  const double mid = 0.5 * (mcc + mrr);
  const double spread = std::sqrt(0.25 * (mcc - mrr) * (mcc - mrr) + mrc * mrc);
  fit.semi_major = 2.0 * std::sqrt(mid + spread);
  fit.semi_minor = 2.0 * std::sqrt(std::max(mid - spread, 0.0));
  fit.angle = 0.5 * std::atan2(2.0 * mrc, mcc - mrr);
  const double ca = std::cos(fit.angle), sa = std::sin(fit.angle);
  for (std::size_t r = 0; r < binary.height; ++r) {
    for (std::size_t c = 0; c < binary.width; ++c) {
      const double dr = static_cast<double>(r) - fit.center_row;
      const double dc = static_cast<double>(c) - fit.center_col;
      const double u = (dc * ca + dr * sa) / fit.semi_major;
      const double v = (-dc * sa + dr * ca) / fit.semi_minor;
      fit.mask.at(r, c) = u * u + v * v <= 1.0 ? 1 : 0;
    }
  }
  return fit;
}

/// Ellipse fit applied per foreground class; higher classes painted last.
inline Mask ellipse_fit_classes(const Mask& mask, std::size_t num_classes) {
  Mask out(mask.height, mask.width, 0);
  for (std::size_t cls = 1; cls < num_classes; ++cls) {
    const auto fit = ellipse_fit(binarize(mask, static_cast<std::uint8_t>(cls)));
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (fit.mask.values[i]) out.values[i] = static_cast<std::uint8_t>(cls);
    }
  }
  return out;
}

struct ClassMetrics {
  std::uint8_t cls = 0;
  double dice = 0;
  double jaccard = 0;
  std::optional<double> hausdorff;
  std::vector<TrimapPoint> trimap;
};

struct MetricReport {
  std::vector<ClassMetrics> classes;  // one entry per foreground class, ascending
};

/// Per foreground class: Dice/Jaccard on regions, Hausdorff on boundary
/// pixel sets, trimap on the class-vs-rest binarization.
inline MetricReport evaluate_pair(const Mask& pred, const Mask& gt, std::size_t num_classes,
                                  const std::vector<std::size_t>& widths = default_trimap_widths()) {
  if (!pred.same_size(gt)) throw std::invalid_argument("evaluate_pair: mask sizes differ");
  MetricReport report;
  for (std::size_t cls = 1; cls < num_classes; ++cls) {
    const auto c = static_cast<std::uint8_t>(cls);
    const Mask p = binarize(pred, c), g = binarize(gt, c);
    const PixelSet ps = PixelSet::from_binary(p), gs = PixelSet::from_binary(g);
    ClassMetrics m;
    m.cls = c;
    m.dice = dice(ps, gs);
    m.jaccard = jaccard(ps, gs);
    m.hausdorff = hausdorff(PixelSet::from_binary(extract_boundary(p)),
                            PixelSet::from_binary(extract_boundary(g)));
    m.trimap = trimap_error(p, g, widths);
    report.classes.push_back(std::move(m));
  }
  return report;
}

/// Means over samples for one class. Undefined values are excluded and counted.
struct ClassAggregate {
  std::uint8_t cls = 0;
  std::size_t samples = 0;
  double dice = 0;
  double jaccard = 0;
  std::optional<double> hausdorff;
  std::size_t hausdorff_undefined = 0;
  std::vector<TrimapPoint> trimap;
  std::vector<std::size_t> trimap_undefined;
};

inline std::vector<ClassAggregate> aggregate(const std::vector<MetricReport>& reports) {
  std::vector<ClassAggregate> out;
  if (reports.empty()) return out;
  for (std::size_t k = 0; k < reports[0].classes.size(); ++k) {
    ClassAggregate agg;
    agg.cls = reports[0].classes[k].cls;
    const std::size_t nw = reports[0].classes[k].trimap.size();
    double hsum = 0;
    std::size_t hn = 0;
    std::vector<double> tsum(nw, 0);
    std::vector<std::size_t> tn(nw, 0);
    agg.trimap_undefined.assign(nw, 0);
    for (const auto& r : reports) {
      const auto& m = r.classes.at(k);
      ++agg.samples;
      agg.dice += m.dice;
      agg.jaccard += m.jaccard;
      if (m.hausdorff) {
        hsum += *m.hausdorff;
        ++hn;
      } else {
        ++agg.hausdorff_undefined;
      }
      for (std::size_t w = 0; w < nw; ++w) {
        if (m.trimap[w].error_fraction) {
          tsum[w] += *m.trimap[w].error_fraction;
          ++tn[w];
        } else {
          ++agg.trimap_undefined[w];
        }
      }
    }
    agg.dice /= static_cast<double>(agg.samples);
    agg.jaccard /= static_cast<double>(agg.samples);
    if (hn) agg.hausdorff = hsum / static_cast<double>(hn);
    for (std::size_t w = 0; w < nw; ++w) {
      TrimapPoint pt{reports[0].classes[k].trimap[w].width, std::nullopt};
      if (tn[w]) pt.error_fraction = tsum[w] / static_cast<double>(tn[w]);
      agg.trimap.push_back(pt);
    }
    out.push_back(std::move(agg));
  }
  return out;
}

/// Mean Dice over all samples and foreground classes.
inline double mean_foreground_dice(const std::vector<MetricReport>& reports) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& r : reports) {
    for (const auto& m : r.classes) {
      s += m.dice;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace psinet
