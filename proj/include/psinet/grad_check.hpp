#pragma once

// Central-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "psinet/tensor.hpp"

namespace psinet {

template <class T>
using ScalarFn = std::function<Tensor<T>(const std::vector<Tensor<T>>&)>;

/// Relative error with a denominator floor so that near-zero gradient entries
/// are judged on absolute error instead.
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return denom == 0.0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
  }
  return worst;
}

/// (f(x+eps) - f(x-eps)) / (2 eps) for every element of every input, in
/// input order. Inputs are restored afterwards.
template <class T>
std::vector<double> numeric_gradient(const ScalarFn<T>& f, std::vector<Tensor<T>>& inputs,
                                     double eps) {
  std::vector<double> out;
  for (auto& t : inputs) {
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = static_cast<T>(saved + eps);
      const double plus = f(inputs).item();
      values[i] = static_cast<T>(saved - eps);
      const double minus = f(inputs).item();
      values[i] = saved;
      out.push_back((plus - minus) / (2 * eps));
    }
  }
  return out;
}

/// Gradients of f w.r.t. the inputs by reverse mode, flattened in input order.
template <class T>
std::vector<double> analytic_gradient(const ScalarFn<T>& f, std::vector<Tensor<T>>& inputs) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(f(inputs));
  std::vector<double> out;
  for (auto& t : inputs) {
    for (T g : t.grad()) out.push_back(g);
  }
  return out;
}

/// Worst per-element relative error between reverse-mode and central-difference
/// gradients of the scalar function f.
template <class T>
double grad_check(const ScalarFn<T>& f, std::vector<Tensor<T>> inputs, double eps,
                  double floor = 1e-8) {
  const auto analytic = analytic_gradient(f, inputs);
  const auto numeric = numeric_gradient(f, inputs, eps);
  return max_relative_error(analytic, numeric, floor);
}

}  // namespace psinet
