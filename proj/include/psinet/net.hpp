#pragma once

// Psi-shaped encoder/decoder: one shared encoder and up to three parallel
// decoders (mask, contour, distance) with skip connections.
//
// Encoder: `stages` blocks of (conv3x3 + ReLU) x convs_per_stage followed by
// a 2x2 max-pool; block s has base_channels * 2^s channels and its pre-pool
// output is kept as skip s. The pooled output of the last block is the
// bottleneck.
//
// Decoder: the bottleneck is upsampled by `bottleneck_upsample` (2 or 4),
// landing on resolution level L0 = stages - log2(bottleneck_upsample). At
// each level l = L0..0 the decoder concatenates skip l, runs a conv block
// with the level's channel count, and (below L0) is preceded by a x2
// upsample. With a x4 bottleneck upsample the deepest skip is never visited.
// A final 3x3 head maps to num_classes channels + softmax (mask, contour) or
// one channel + sigmoid (distance).

#include <bit>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "psinet/ops.hpp"

namespace psinet {

enum class Variant { kM, kMC, kMD, kMCD };

inline bool has_contour(Variant v) { return v == Variant::kMC || v == Variant::kMCD; }
inline bool has_distance(Variant v) { return v == Variant::kMD || v == Variant::kMCD; }

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kM: return "M";
    case Variant::kMC: return "MC";
    case Variant::kMD: return "MD";
    case Variant::kMCD: return "MCD";
  }
  return "?";
}

inline Variant parse_variant(std::string_view text) {
  std::string up;
  for (char c : text) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "M") return Variant::kM;
  if (up == "MC") return Variant::kMC;
  if (up == "MD") return Variant::kMD;
  if (up == "MCD") return Variant::kMCD;
  throw std::invalid_argument("unknown variant '" + std::string(text) + "' (expected m, mc, md, mcd)");
}

struct NetConfig {
  Variant variant = Variant::kMCD;
  std::size_t num_classes = 2;
  std::size_t stages = 4;
  std::size_t base_channels = 16;
  std::size_t bottleneck_upsample = 4;
  std::size_t convs_per_stage = 2;
  std::size_t input_channels = 3;
  std::size_t input_height = 256;
  std::size_t input_width = 256;

  std::size_t channels(std::size_t level) const { return base_channels << level; }
  std::size_t first_decoder_level() const {
    return stages - static_cast<std::size_t>(std::countr_zero(bottleneck_upsample));
  }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (num_classes > 256) throw std::invalid_argument("num_classes must be <= 256");
    if (stages < 1) throw std::invalid_argument("stages must be >= 1");
    if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
    if (convs_per_stage < 1) throw std::invalid_argument("convs_per_stage must be >= 1");
    if (input_channels < 1) throw std::invalid_argument("input_channels must be >= 1");
    if (bottleneck_upsample != 2 && bottleneck_upsample != 4) {
      throw std::invalid_argument("bottleneck_upsample must be 2 or 4");
    }
    if (bottleneck_upsample == 4 && stages < 2) {
      throw std::invalid_argument("bottleneck_upsample 4 needs at least 2 stages");
    }
    const std::size_t div = std::size_t{1} << stages;
    if (input_height == 0 || input_width == 0 || input_height % div || input_width % div) {
      throw std::invalid_argument("input size " + std::to_string(input_height) + "x" +
                                  std::to_string(input_width) + " is not divisible by 2^stages = " +
                                  std::to_string(div));
    }
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

enum class Decoder { kMask, kContour, kDistance };

inline std::string decoder_prefix(Decoder d) {
  switch (d) {
    case Decoder::kMask: return "mask_decoder";
    case Decoder::kContour: return "contour_decoder";
    case Decoder::kDistance: return "distance_decoder";
  }
  return "?";
}

inline std::vector<Decoder> active_decoders(Variant v) {
  std::vector<Decoder> out{Decoder::kMask};
  if (has_contour(v)) out.push_back(Decoder::kContour);
  if (has_distance(v)) out.push_back(Decoder::kDistance);
  return out;
}

/// Shape of one convolution in the network.
struct ConvSpec {
  std::string name;  // parameter prefix; ".weight" / ".bias" appended
  std::size_t in_channels;
  std::size_t out_channels;
};

/// Convolutions of the network in forward order. The layout is a pure
/// function of the config.
inline std::vector<ConvSpec> conv_layout(const NetConfig& cfg) {
  std::vector<ConvSpec> out;
  std::size_t in = cfg.input_channels;
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    for (std::size_t j = 0; j < cfg.convs_per_stage; ++j) {
      out.push_back({"encoder.stage" + std::to_string(s) + ".conv" + std::to_string(j), in,
                     cfg.channels(s)});
      in = cfg.channels(s);
    }
  }
  const std::size_t bottleneck = cfg.channels(cfg.stages - 1);
  for (Decoder dec : active_decoders(cfg.variant)) {
    const std::string prefix = decoder_prefix(dec);
    std::size_t prev = bottleneck;
    for (std::size_t l = cfg.first_decoder_level() + 1; l-- > 0;) {
      std::size_t cin = prev + cfg.channels(l);
      for (std::size_t j = 0; j < cfg.convs_per_stage; ++j) {
        out.push_back({prefix + ".level" + std::to_string(l) + ".conv" + std::to_string(j), cin,
                       cfg.channels(l)});
        cin = cfg.channels(l);
      }
      prev = cfg.channels(l);
    }
    out.push_back({prefix + ".head", prev, dec == Decoder::kDistance ? 1 : cfg.num_classes});
  }
  return out;
}

/// Per-pixel outputs. Optional heads are present exactly when the variant has them.
template <class T>
struct Predictions {
  Tensor<T> mask_probs;                  // (N, num_classes, H, W), softmax
  std::optional<Tensor<T>> contour_probs;  // (N, num_classes, H, W), softmax
  std::optional<Tensor<T>> distance;     // (N, 1, H, W), sigmoid
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

template <class T>
class PsiNet {
 public:
  using ParameterMap = std::map<std::string, Tensor<T>>;

  /// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)) and zero
  /// biases. Each parameter draws from its own stream keyed by (seed, name),
  /// so a tensor's initial value does not depend on which decoders exist.
  static PsiNet build(const NetConfig& config, std::uint64_t seed) {
    config.validate();
    PsiNet net(config);
    for (const auto& spec : net.layout_) {
      const std::size_t fan_in = spec.in_channels * 9;
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      const std::string wname = spec.name + ".weight";
      const std::uint64_t key = detail::fnv1a(wname);
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
      std::mt19937_64 rng(seq);
      std::uniform_real_distribution<double> dist(-bound, bound);
      std::vector<T> w(spec.out_channels * spec.in_channels * 9);
      for (auto& v : w) v = static_cast<T>(dist(rng));
      net.params_[wname] =
          Tensor<T>::from({spec.out_channels, spec.in_channels, 3, 3}, std::move(w));
      net.params_[spec.name + ".bias"] = Tensor<T>::zeros({spec.out_channels});
    }
    for (auto& [_, p] : net.params_) p.set_requires_grad(true);
    return net;
  }

  /// Network with the given parameter values; names and shapes must match
  /// the config's layout exactly.
  static PsiNet from_parameters(const NetConfig& config,
                                const std::map<std::string, std::pair<Shape, std::vector<T>>>& values) {
    config.validate();
    PsiNet net(config);
    std::size_t expected = 0;
    for (const auto& spec : net.layout_) {
      for (const auto& [suffix, shape] :
           {std::pair<std::string, Shape>{".weight", {spec.out_channels, spec.in_channels, 3, 3}},
            std::pair<std::string, Shape>{".bias", {spec.out_channels}}}) {
        const std::string name = spec.name + suffix;
        auto it = values.find(name);
        if (it == values.end()) throw std::invalid_argument("missing parameter " + name);
        if (it->second.first != shape) {
          throw ShapeError("parameter " + name + " has shape " + to_string(it->second.first) +
                           ", expected " + to_string(shape));
        }
        net.params_[name] = Tensor<T>::from(shape, it->second.second);
        net.params_[name].set_requires_grad(true);
        ++expected;
      }
    }
    if (values.size() != expected) {
      throw std::invalid_argument("parameter set has " + std::to_string(values.size()) +
                                  " entries, network expects " + std::to_string(expected));
    }
    return net;
  }

  /// Same network with parameters converted to another scalar type.
  template <class U>
  PsiNet<U> cast() const {
    std::map<std::string, std::pair<Shape, std::vector<U>>> values;
    for (const auto& [name, p] : params_) {
      values[name] = {p.shape(), std::vector<U>(p.data().begin(), p.data().end())};
    }
    return PsiNet<U>::from_parameters(config_, values);
  }

  const NetConfig& config() const { return config_; }
  const std::vector<ConvSpec>& layout() const { return layout_; }

  /// Parameters in sorted name order.
  const ParameterMap& parameters() const { return params_; }
  ParameterMap& parameters() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  Predictions<T> forward(const Tensor<T>& images) const {
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] != config_.input_channels || s[2] != config_.input_height ||
        s[3] != config_.input_width) {
      throw ShapeError("forward: expected input (N," + std::to_string(config_.input_channels) + "," +
                       std::to_string(config_.input_height) + "," +
                       std::to_string(config_.input_width) + "), got " + to_string(s));
    }
    std::vector<Tensor<T>> skips;
    Tensor<T> x = images;
    for (std::size_t st = 0; st < config_.stages; ++st) {
      x = conv_block("encoder.stage" + std::to_string(st), x);
      skips.push_back(x);
      x = maxpool2(x);
    }
    const Tensor<T> bottleneck = x;

    Predictions<T> out;
    for (Decoder dec : active_decoders(config_.variant)) {
      const std::string prefix = decoder_prefix(dec);
      Tensor<T> y = upsample(bottleneck, config_.bottleneck_upsample);
      const std::size_t top = config_.first_decoder_level();
      for (std::size_t l = top + 1; l-- > 0;) {
        if (l != top) y = upsample(y, std::size_t{2});
        y = concat_channels(y, skips[l]);
        y = conv_block(prefix + ".level" + std::to_string(l), y);
      }
      Tensor<T> logits = conv(prefix + ".head", y);
      switch (dec) {
        case Decoder::kMask: out.mask_probs = softmax_channels(logits); break;
        case Decoder::kContour: out.contour_probs = softmax_channels(logits); break;
        case Decoder::kDistance: out.distance = sigmoid(logits); break;
      }
    }
    return out;
  }

 private:
  explicit PsiNet(const NetConfig& config) : config_(config), layout_(conv_layout(config)) {
    check_skip_geometry();
  }

  // Walks the spatial sizes the decoder visits and checks every concatenation
  // joins equal sizes and the head lands on the input size.
  void check_skip_geometry() const {
    std::vector<std::size_t> skip_h;
    std::size_t h = config_.input_height;
    for (std::size_t s = 0; s < config_.stages; ++s) {
      skip_h.push_back(h);
      h /= 2;
    }
    h *= config_.bottleneck_upsample;
    const std::size_t top = config_.first_decoder_level();
    for (std::size_t l = top + 1; l-- > 0;) {
      if (l != top) h *= 2;
      if (h != skip_h[l]) throw std::logic_error("skip connection size mismatch at level " + std::to_string(l));
    }
    if (h != config_.input_height) throw std::logic_error("decoder output size does not match input");
  }

  Tensor<T> conv(const std::string& name, const Tensor<T>& x) const {
    return conv2d(x, params_.at(name + ".weight"), params_.at(name + ".bias"));
  }

  Tensor<T> conv_block(const std::string& prefix, Tensor<T> x) const {
    for (std::size_t j = 0; j < config_.convs_per_stage; ++j) {
      x = relu(conv(prefix + ".conv" + std::to_string(j), x));
    }
    return x;
  }

  NetConfig config_;
  std::vector<ConvSpec> layout_;
  ParameterMap params_;
};

}  // namespace psinet
