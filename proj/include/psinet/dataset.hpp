#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "psinet/grid.hpp"
#include "psinet/net.hpp"
#include "psinet/targets.hpp"

namespace psinet {

/// One training example with derived ground truth.
struct Sample {
  std::string id;
  Image image;
  Mask mask;
  ContourMap contour;
  DistanceMap distance;
};

inline Sample make_sample(std::string id, Image image, Mask mask, std::size_t num_classes,
                          const TargetOptions& options = {}) {
  if (image.height != mask.height || image.width != mask.width) {
    throw std::invalid_argument("sample " + id + ": image and mask sizes differ");
  }
  auto t = derive_targets(mask, num_classes, options);
  return {std::move(id), std::move(image), std::move(mask), std::move(t.contour), std::move(t.distance)};
}

/// Seeded shuffle of [0, count) split into a prefix of round(count * fraction)
/// training indices and the remaining test indices.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double fraction, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("split: empty dataset");
  if (!(fraction > 0 && fraction < 1)) throw std::invalid_argument("split: fraction must be in (0,1)");
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * fraction));
  if (n_train == 0 || n_train == count) {
    throw std::invalid_argument("split: fraction " + std::to_string(fraction) + " of " +
                                std::to_string(count) + " samples leaves one side empty");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return {std::vector<std::size_t>(order.begin(), order.begin() + static_cast<long>(n_train)),
          std::vector<std::size_t>(order.begin() + static_cast<long>(n_train), order.end())};
}

template <class T>
struct Batch {
  Tensor<T> images;
  std::vector<std::uint8_t> mask_labels;
  std::vector<std::uint8_t> contour_labels;
  std::vector<T> distance;
};

template <class T>
Tensor<T> image_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw std::invalid_argument("image_tensor: empty batch");
  const Image& first = *images[0];
  std::vector<T> data;
  data.reserve(images.size() * first.values.size());
  for (const Image* im : images) {
    if (im->channels != first.channels || im->height != first.height || im->width != first.width) {
      throw ShapeError("image_tensor: images in a batch must share a shape");
    }
    data.insert(data.end(), im->values.begin(), im->values.end());
  }
  return Tensor<T>::from({images.size(), first.channels, first.height, first.width}, std::move(data));
}

template <class T>
Batch<T> make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  Batch<T> b;
  std::vector<const Image*> ims;
  for (std::size_t i : indices) {
    const Sample& s = samples.at(i);
    ims.push_back(&s.image);
    b.mask_labels.insert(b.mask_labels.end(), s.mask.values.begin(), s.mask.values.end());
    b.contour_labels.insert(b.contour_labels.end(), s.contour.values.begin(), s.contour.values.end());
    for (double d : s.distance.values) b.distance.push_back(static_cast<T>(d));
  }
  b.images = image_tensor<T>(ims);
  return b;
}

/// Per-pixel argmax over channels (lowest class wins ties), one mask per batch item.
template <class T>
std::vector<Mask> argmax_masks(const Tensor<T>& probs) {
  const auto d = kernels::dims4(probs.shape(), "argmax_masks");
  std::vector<Mask> out;
  const auto v = probs.data();
  for (std::size_t n = 0; n < d.n; ++n) {
    Mask m(d.h, d.w);
    for (std::size_t p = 0; p < d.plane(); ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < d.c; ++c) {
        if (v[(n * d.c + c) * d.plane() + p] > v[(n * d.c + best) * d.plane() + p]) best = c;
      }
      m.values[p] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Channel 0 of each batch item as a grid.
template <class T>
std::vector<Grid<double>> distance_maps(const Tensor<T>& distance) {
  const auto d = kernels::dims4(distance.shape(), "distance_maps");
  std::vector<Grid<double>> out;
  for (std::size_t n = 0; n < d.n; ++n) {
    Grid<double> g(d.h, d.w);
    for (std::size_t p = 0; p < d.plane(); ++p) g.values[p] = distance[n * d.c * d.plane() + p];
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace psinet
