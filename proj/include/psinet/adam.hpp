#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "psinet/tensor.hpp"

namespace psinet {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamMoments {
  std::vector<T> first;
  std::vector<T> second;
  friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

template <class T>
struct AdamState {
  std::map<std::string, AdamMoments<T>> moments;  // keyed by parameter name
  std::uint64_t step = 0;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update of every parameter from its current grad.
template <class T>
void adam_step(std::map<std::string, Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
  for (const auto& [name, p] : params) {
    auto it = state.moments.find(name);
    if (it != state.moments.end() &&
        (it->second.first.size() != p.size() || it->second.second.size() != p.size())) {
      throw ShapeError("adam_step: moment size mismatch for " + name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (auto& [name, p] : params) {
    auto& mom = state.moments[name];
    if (mom.first.empty()) {
      mom.first.assign(p.size(), T{0});
      mom.second.assign(p.size(), T{0});
    }
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.first[i] = b1 * mom.first[i] + (T{1} - b1) * g[i];
      mom.second[i] = b2 * mom.second[i] + (T{1} - b2) * g[i] * g[i];
      const double m_hat = static_cast<double>(mom.first[i]) / c1;
      const double v_hat = static_cast<double>(mom.second[i]) / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) -
                            cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

}  // namespace psinet
