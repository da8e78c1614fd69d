#pragma once

// Joint loss: lambda1 * NLL(mask) + lambda2 * NLL(contour) + lambda3 * MSE(distance).

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "psinet/ops.hpp"

namespace psinet {

struct LossWeights {
  double mask = 1.0;      // lambda1
  double contour = 1.0;   // lambda2
  double distance = 1.0;  // lambda3

  void validate() const {
    if (mask < 0 || contour < 0 || distance < 0) {
      throw std::invalid_argument("loss weights must be non-negative");
    }
    if (mask == 0 && contour == 0 && distance == 0) {
      throw std::invalid_argument("at least one loss weight must be positive");
    }
  }
};

struct LossBreakdown {
  double mask_loss = 0;
  double contour_loss = 0;
  double distance_loss = 0;
  double total = 0;
};

inline constexpr double kLogFloor = 1e-12;

template <class T>
Tensor<T> nll_mask(const Tensor<T>& mask_probs, std::span<const std::uint8_t> labels,
                   Reduction reduction = Reduction::kMean) {
  return nll(mask_probs, labels, reduction, static_cast<T>(kLogFloor));
}

template <class T>
Tensor<T> nll_contour(const Tensor<T>& contour_probs, std::span<const std::uint8_t> labels,
                      Reduction reduction = Reduction::kMean) {
  return nll(contour_probs, labels, reduction, static_cast<T>(kLogFloor));
}

template <class T>
Tensor<T> mse_distance(const Tensor<T>& d_hat, std::span<const T> target,
                       Reduction reduction = Reduction::kMean) {
  const auto& s = d_hat.shape();
  if (s.size() != 4 || s[1] != 1) {
    throw ShapeError("mse_distance: prediction must be (N,1,H,W), got " + to_string(s));
  }
  return mse(d_hat, target, reduction);
}

/// Scalar loss tensor together with its logged components.
template <class T>
struct JointLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

/// Weighted sum of whichever components are present. Absent components
/// contribute 0 and their weight is ignored.
template <class T>
JointLoss<T> total_loss(const LossWeights& weights, const Tensor<T>& mask_term,
                        const std::optional<Tensor<T>>& contour_term,
                        const std::optional<Tensor<T>>& distance_term) {
  weights.validate();
  std::vector<Tensor<T>> terms{mask_term};
  std::vector<T> w{static_cast<T>(weights.mask)};
  LossBreakdown b;
  b.mask_loss = mask_term.item();
  if (contour_term) {
    terms.push_back(*contour_term);
    w.push_back(static_cast<T>(weights.contour));
    b.contour_loss = contour_term->item();
  }
  if (distance_term) {
    terms.push_back(*distance_term);
    w.push_back(static_cast<T>(weights.distance));
    b.distance_loss = distance_term->item();
  }
  Tensor<T> total = weighted_sum(terms, w);
  b.total = total.item();
  return {std::move(total), b};
}

}  // namespace psinet
