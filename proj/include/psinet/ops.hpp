#pragma once

// Differentiable operations used by the Psi network, plus the raw kernels
// behind them. All image tensors are row-major (N, C, H, W).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "psinet/tensor.hpp"

namespace psinet {

enum class Reduction { kMean, kSum };

namespace kernels {

struct Dims4 {
  std::size_t n, c, h, w;
  std::size_t plane() const { return h * w; }
};

inline Dims4 dims4(const Shape& s, const char* op) {
  if (s.size() != 4) {
    throw ShapeError(std::string(op) + ": expected a rank-4 (N,C,H,W) tensor, got " + to_string(s));
  }
  return {s[0], s[1], s[2], s[3]};
}

// 3x3 cross-correlation, stride 1, zero padding 1. `out` is overwritten.
template <class T>
void conv3x3_forward(std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                     std::span<T> out, Dims4 d, std::size_t cout) {
  const std::size_t H = d.h, W = d.w, P = d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = in.data() + n * d.c * P;
    for (std::size_t co = 0; co < cout; ++co) {
      T* dst = out.data() + (n * cout + co) * P;
      std::fill(dst, dst + P, bias[co]);
      for (std::size_t ci = 0; ci < d.c; ++ci) {
        const T* plane = src + ci * P;
        const T* k = weight.data() + (co * d.c + ci) * 9;
        for (std::size_t y = 0; y < H; ++y) {
          T* orow = dst + y * W;
          for (int ky = 0; ky < 3; ++ky) {
            const long iy = static_cast<long>(y) + ky - 1;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            const T* irow = plane + iy * W;
            const T k0 = k[ky * 3 + 0], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
            // Interior columns: all three taps valid.
            for (std::size_t x = 1; x + 1 < W; ++x) {
              orow[x] += k0 * irow[x - 1] + k1 * irow[x] + k2 * irow[x + 1];
            }
            // Border columns.
            if (W == 1) {
              orow[0] += k1 * irow[0];
            } else {
              orow[0] += k1 * irow[0] + k2 * irow[1];
              orow[W - 1] += k0 * irow[W - 2] + k1 * irow[W - 1];
            }
          }
        }
      }
    }
  }
}

// Accumulates input, weight and bias gradients for conv3x3_forward.
// Any of the gradient spans may be empty to skip that term.
template <class T>
void conv3x3_backward(std::span<const T> in, std::span<const T> weight, std::span<const T> gout,
                      std::span<T> gin, std::span<T> gweight, std::span<T> gbias, Dims4 d,
                      std::size_t cout) {
  const std::size_t H = d.h, W = d.w, P = d.plane();
  std::vector<T> acc(W);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = in.data() + n * d.c * P;
    for (std::size_t co = 0; co < cout; ++co) {
      const T* g = gout.data() + (n * cout + co) * P;
      if (!gbias.empty()) {
        T s = 0;
        for (std::size_t i = 0; i < P; ++i) s += g[i];
        gbias[co] += s;
      }
      for (std::size_t ci = 0; ci < d.c; ++ci) {
        const T* plane = src + ci * P;
        const T* k = weight.data() + (co * d.c + ci) * 9;
        if (!gin.empty()) {
          T* gplane = gin.data() + (n * d.c + ci) * P;
          for (std::size_t y = 0; y < H; ++y) {
            const T* grow = g + y * W;
            for (int ky = 0; ky < 3; ++ky) {
              const long iy = static_cast<long>(y) + ky - 1;
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              T* girow = gplane + iy * W;
              for (int kx = 0; kx < 3; ++kx) {
                const T kv = k[ky * 3 + kx];
                const long dx = kx - 1;
                const std::size_t x0 = dx < 0 ? 1 : 0;
                const std::size_t x1 = dx > 0 ? W - 1 : W;
                for (std::size_t x = x0; x < x1; ++x) girow[x + dx] += kv * grow[x];
              }
            }
          }
        }
        if (!gweight.empty()) {
          T* gk = gweight.data() + (co * d.c + ci) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const long dy = ky - 1, dx = kx - 1;
              const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? H - 1 : H;
              const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? W - 1 : W;
              std::fill(acc.begin(), acc.end(), T{0});
              for (std::size_t y = y0; y < y1; ++y) {
                const T* grow = g + y * W;
                const T* irow = plane + (y + dy) * W + dx;
                for (std::size_t x = x0; x < x1; ++x) acc[x] += grow[x] * irow[x];
              }
              T s = 0;
              for (std::size_t x = x0; x < x1; ++x) s += acc[x];
              gk[ky * 3 + kx] += s;
            }
          }
        }
      }
    }
  }
}

// Per-axis bilinear sampling table for a factor-f upscale with half-pixel
// centers (corner alignment off): out[o] = (1-frac)*in[lo] + frac*in[hi].
struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;

  LinearTaps(std::size_t in_size, std::size_t factor) {
    const std::size_t out_size = in_size * factor;
    lo.resize(out_size);
    hi.resize(out_size);
    frac.resize(out_size);
    for (std::size_t o = 0; o < out_size; ++o) {
      double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      if (src < 0) src = 0;
      auto i0 = static_cast<std::size_t>(src);
      if (i0 > in_size - 1) i0 = in_size - 1;
      lo[o] = i0;
      hi[o] = std::min(i0 + 1, in_size - 1);
      frac[o] = src - static_cast<double>(i0);
    }
  }
};

template <class T>
void upsample_forward(std::span<const T> in, std::span<T> out, Dims4 d, std::size_t factor) {
  const LinearTaps ty(d.h, factor), tx(d.w, factor);
  const std::size_t OH = d.h * factor, OW = d.w * factor;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const T* src = in.data() + p * d.plane();
    T* dst = out.data() + p * OH * OW;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      const T* r0 = src + ty.lo[oy] * d.w;
      const T* r1 = src + ty.hi[oy] * d.w;
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const std::size_t a = tx.lo[ox], b = tx.hi[ox];
        const T top = (T{1} - fx) * r0[a] + fx * r0[b];
        const T bot = (T{1} - fx) * r1[a] + fx * r1[b];
        dst[oy * OW + ox] = (T{1} - fy) * top + fy * bot;
      }
    }
  }
}

// Transpose of upsample_forward; accumulates into `gin`.
template <class T>
void upsample_backward(std::span<const T> gout, std::span<T> gin, Dims4 d, std::size_t factor) {
  const LinearTaps ty(d.h, factor), tx(d.w, factor);
  const std::size_t OH = d.h * factor, OW = d.w * factor;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const T* g = gout.data() + p * OH * OW;
    T* dst = gin.data() + p * d.plane();
    for (std::size_t oy = 0; oy < OH; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      T* r0 = dst + ty.lo[oy] * d.w;
      T* r1 = dst + ty.hi[oy] * d.w;
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const std::size_t a = tx.lo[ox], b = tx.hi[ox];
        const T v = g[oy * OW + ox];
        const T top = (T{1} - fy) * v, bot = fy * v;
        r0[a] += (T{1} - fx) * top;
        r0[b] += fx * top;
        r1[a] += (T{1} - fx) * bot;
        r1[b] += fx * bot;
      }
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Differentiable operations.

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const auto d = kernels::dims4(input.shape(), "conv2d");
  const auto& ws = weight.shape();
  if (ws.size() != 4 || ws[2] != 3 || ws[3] != 3) {
    throw ShapeError("conv2d: weight must be (Cout,Cin,3,3), got " + to_string(ws));
  }
  if (ws[1] != d.c) {
    throw ShapeError("conv2d: input has " + std::to_string(d.c) + " channels but weight expects " +
                     std::to_string(ws[1]));
  }
  const std::size_t cout = ws[0];
  if (bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias must be (" + std::to_string(cout) + "), got " +
                     to_string(bias.shape()));
  }
  std::vector<T> out(d.n * cout * d.plane());
  kernels::conv3x3_forward<T>(input.data(), weight.data(), bias.data(), out, d, cout);
  return Tensor<T>::make_result(
      {d.n, cout, d.h, d.w}, std::move(out), "conv2d", {input, weight, bias},
      [d, cout](detail::Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        auto& b = *self.inputs[2];
        std::span<T> gx, gw, gb;
        if (x.requires_grad) gx = x.ensure_grad();
        if (w.requires_grad) gw = w.ensure_grad();
        if (b.requires_grad) gb = b.ensure_grad();
        kernels::conv3x3_backward<T>(x.data, w.data, self.grad, gx, gw, gb, d, cout);
      });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v < T{0} ? T{0} : v;  // NaN passes through
  return Tensor<T>::make_result(x.shape(), std::move(out), "relu", {x}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.data[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    // Branches keep exp() from overflowing for large |v|.
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), "sigmoid", {x},
                                [](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    const T s = self.data[i];
                                    g[i] += self.grad[i] * s * (T{1} - s);
                                  }
                                });
}

template <class T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  const auto d = kernels::dims4(x.shape(), "maxpool2");
  if (d.h % 2 || d.w % 2) {
    throw ShapeError("maxpool2: spatial size must be even, got " + to_string(x.shape()));
  }
  const std::size_t OH = d.h / 2, OW = d.w / 2;
  std::vector<T> out(d.n * d.c * OH * OW);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const auto src = x.data();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const std::size_t base = p * d.plane();
        std::size_t best = base + (2 * oy) * d.w + 2 * ox;
        // Row-major scan; strict > keeps the first maximum on ties. A NaN wins
        // so that it propagates.
        const std::size_t cand[3] = {best + 1, best + d.w, best + d.w + 1};
        for (std::size_t c : cand) {
          if (src[c] > src[best] || (std::isnan(src[c]) && !std::isnan(src[best]))) best = c;
        }
        const std::size_t o = (p * OH + oy) * OW + ox;
        out[o] = src[best];
        (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return Tensor<T>::make_result({d.n, d.c, OH, OW}, std::move(out), "maxpool2", {x},
                                [argmax](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t o = 0; o < self.grad.size(); ++o) {
                                    g[(*argmax)[o]] += self.grad[o];
                                  }
                                });
}

template <class T>
Tensor<T> upsample(const Tensor<T>& x, std::size_t factor) {
  if (factor != 2 && factor != 4) {
    throw std::invalid_argument("upsample: factor must be 2 or 4, got " + std::to_string(factor));
  }
  const auto d = kernels::dims4(x.shape(), "upsample");
  std::vector<T> out(d.n * d.c * d.plane() * factor * factor);
  kernels::upsample_forward<T>(x.data(), out, d, factor);
  return Tensor<T>::make_result({d.n, d.c, d.h * factor, d.w * factor}, std::move(out), "upsample",
                                {x}, [d, factor](detail::Node<T>& self) {
                                  kernels::upsample_backward<T>(
                                      self.grad, self.inputs[0]->ensure_grad(), d, factor);
                                });
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto da = kernels::dims4(a.shape(), "concat_channels");
  const auto db = kernels::dims4(b.shape(), "concat_channels");
  if (da.n != db.n || da.h != db.h || da.w != db.w) {
    throw ShapeError("concat_channels: mismatched batch/spatial dims " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
  }
  const std::size_t P = da.plane(), C = da.c + db.c;
  std::vector<T> out(da.n * C * P);
  for (std::size_t n = 0; n < da.n; ++n) {
    auto it = out.begin() + n * C * P;
    it = std::copy_n(a.data().begin() + n * da.c * P, da.c * P, it);
    std::copy_n(b.data().begin() + n * db.c * P, db.c * P, it);
  }
  return Tensor<T>::make_result(
      {da.n, C, da.h, da.w}, std::move(out), "concat_channels", {a, b},
      [da, db, P, C](detail::Node<T>& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        for (std::size_t n = 0; n < da.n; ++n) {
          const T* g = self.grad.data() + n * C * P;
          if (ia.requires_grad) {
            T* ga = ia.ensure_grad().data() + n * da.c * P;
            for (std::size_t i = 0; i < da.c * P; ++i) ga[i] += g[i];
          }
          if (ib.requires_grad) {
            T* gb = ib.ensure_grad().data() + n * db.c * P;
            for (std::size_t i = 0; i < db.c * P; ++i) gb[i] += g[da.c * P + i];
          }
        }
      });
}

/// Channels [begin, end) of x.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const auto d = kernels::dims4(x.shape(), "slice_channels");
  if (begin > end || end > d.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") outside " + std::to_string(d.c) + " channels");
  }
  const std::size_t P = d.plane(), C = end - begin;
  std::vector<T> out(d.n * C * P);
  for (std::size_t n = 0; n < d.n; ++n) {
    std::copy_n(x.data().begin() + (n * d.c + begin) * P, C * P, out.begin() + n * C * P);
  }
  return Tensor<T>::make_result({d.n, C, d.h, d.w}, std::move(out), "slice_channels", {x},
                                [d, begin, C, P](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t n = 0; n < d.n; ++n) {
                                    const T* src = self.grad.data() + n * C * P;
                                    T* dst = g.data() + (n * d.c + begin) * P;
                                    for (std::size_t i = 0; i < C * P; ++i) dst[i] += src[i];
                                  }
                                });
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const auto d = kernels::dims4(x.shape(), "softmax_channels");
  if (d.c < 2) throw ShapeError("softmax_channels: need at least 2 channels");
  const std::size_t P = d.plane();
  std::vector<T> out(x.size());
  const auto src = x.data();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t base = n * d.c * P + p;
      T mx = src[base];
      for (std::size_t c = 1; c < d.c; ++c) mx = std::max(mx, src[base + c * P]);
      T total = 0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const T e = std::exp(src[base + c * P] - mx);
        out[base + c * P] = e;
        total += e;
      }
      for (std::size_t c = 0; c < d.c; ++c) out[base + c * P] /= total;
    }
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), "softmax_channels", {x},
                                [d, P](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  const auto& y = self.data;
                                  const auto& gy = self.grad;
                                  for (std::size_t n = 0; n < d.n; ++n) {
                                    for (std::size_t p = 0; p < P; ++p) {
                                      const std::size_t base = n * d.c * P + p;
                                      T dot = 0;
                                      for (std::size_t c = 0; c < d.c; ++c) {
                                        dot += gy[base + c * P] * y[base + c * P];
                                      }
                                      for (std::size_t c = 0; c < d.c; ++c) {
                                        const std::size_t i = base + c * P;
                                        g[i] += y[i] * (gy[i] - dot);
                                      }
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return Tensor<T>::make_result({}, {s}, "sum", {x}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "mul", {a, b},
                                [](detail::Node<T>& self) {
                                  auto& ia = *self.inputs[0];
                                  auto& ib = *self.inputs[1];
                                  if (ia.requires_grad) {
                                    auto& g = ia.ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * ib.data[i];
                                  }
                                  if (ib.requires_grad) {
                                    auto& g = ib.ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * ia.data[i];
                                  }
                                });
}

/// Negative log likelihood of per-pixel class probabilities.
/// `probs` is (N,C,H,W) post-softmax; `labels` holds N*H*W class indices.
/// Probabilities are floored at `floor` before the log; floored entries pass
/// no gradient.
template <class T>
Tensor<T> nll(const Tensor<T>& probs, std::span<const std::uint8_t> labels,
              Reduction reduction = Reduction::kMean, T floor = T(1e-12)) {
  const auto d = kernels::dims4(probs.shape(), "nll");
  const std::size_t P = d.plane();
  if (labels.size() != d.n * P) {
    throw ShapeError("nll: " + std::to_string(labels.size()) + " labels for probabilities of shape " +
                     to_string(probs.shape()));
  }
  auto index = std::make_shared<std::vector<std::size_t>>(labels.size());
  T total = 0;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t l = labels[n * P + p];
      if (l >= d.c) {
        throw std::out_of_range("nll: label " + std::to_string(l) + " >= " + std::to_string(d.c) +
                                " classes");
      }
      const std::size_t i = (n * d.c + l) * P + p;
      (*index)[n * P + p] = i;
      total -= std::log(std::max(probs[i], floor));
    }
  }
  const T scale = reduction == Reduction::kMean ? T{1} / static_cast<T>(labels.size()) : T{1};
  return Tensor<T>::make_result({}, {total * scale}, "nll", {probs},
                                [index, scale, floor](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  auto& g = in.ensure_grad();
                                  const T up = self.grad[0] * scale;
                                  for (std::size_t i : *index) {
                                    if (in.data[i] > floor) g[i] -= up / in.data[i];
                                  }
                                });
}

/// Squared error against a constant target, mean- or sum-reduced.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, std::span<const T> target,
              Reduction reduction = Reduction::kMean) {
  if (target.size() != pred.size()) {
    throw ShapeError("mse: target has " + std::to_string(target.size()) +
                     " values, prediction shape " + to_string(pred.shape()));
  }
  auto residual = std::make_shared<std::vector<T>>(pred.size());
  T total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T r = pred[i] - target[i];
    (*residual)[i] = r;
    total += r * r;
  }
  const T scale = reduction == Reduction::kMean ? T{1} / static_cast<T>(pred.size()) : T{1};
  return Tensor<T>::make_result({}, {total * scale}, "mse", {pred},
                                [residual, scale](detail::Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  const T up = T{2} * self.grad[0] * scale;
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    g[i] += up * (*residual)[i];
                                });
}

/// sum_i weights[i] * terms[i] over scalar terms. Terms with zero weight get
/// no gradient at all.
template <class T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  T total = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    total += weights[i] * terms[i].item();
  }
  return Tensor<T>::make_result({}, {total}, "weighted_sum", terms,
                                [weights](detail::Node<T>& self) {
                                  for (std::size_t i = 0; i < weights.size(); ++i) {
                                    auto& in = *self.inputs[i];
                                    if (!in.requires_grad || weights[i] == T{0}) continue;
                                    in.ensure_grad()[0] += weights[i] * self.grad[0];
                                  }
                                });
}

}  // namespace psinet
