#pragma once

// Training configuration and the plain-text key=value codec shared by
// checkpoint headers and CLI config files.

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "psinet/adam.hpp"
#include "psinet/loss.hpp"
#include "psinet/net.hpp"
#include "psinet/targets.hpp"

namespace psinet {

struct TrainConfig {
  std::size_t epochs = 150;
  double learning_rate = 1e-4;
  std::size_t batch_size = 4;
  LossWeights weights;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double split_fraction = 0.7;
  Reduction reduction = Reduction::kMean;
  TargetOptions targets;

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(split_fraction > 0 && split_fraction < 1)) {
      throw std::invalid_argument("split fraction must be in (0, 1)");
    }
    weights.validate();
  }
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view key, std::string_view text) {
  double v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

inline KeyValues to_key_values(const NetConfig& c) {
  return {
      {"net.variant", to_string(c.variant)},
      {"net.num_classes", std::to_string(c.num_classes)},
      {"net.stages", std::to_string(c.stages)},
      {"net.base_channels", std::to_string(c.base_channels)},
      {"net.bottleneck_upsample", std::to_string(c.bottleneck_upsample)},
      {"net.convs_per_stage", std::to_string(c.convs_per_stage)},
      {"net.input_channels", std::to_string(c.input_channels)},
      {"net.input_height", std::to_string(c.input_height)},
      {"net.input_width", std::to_string(c.input_width)},
  };
}

inline KeyValues to_key_values(const TrainConfig& c) {
  return {
      {"train.epochs", std::to_string(c.epochs)},
      {"train.learning_rate", format_double(c.learning_rate)},
      {"train.batch_size", std::to_string(c.batch_size)},
      {"train.lambda1", format_double(c.weights.mask)},
      {"train.lambda2", format_double(c.weights.contour)},
      {"train.lambda3", format_double(c.weights.distance)},
      {"train.seed", std::to_string(c.seed)},
      {"train.adam_beta1", format_double(c.adam_beta1)},
      {"train.adam_beta2", format_double(c.adam_beta2)},
      {"train.adam_epsilon", format_double(c.adam_epsilon)},
      {"train.split_fraction", format_double(c.split_fraction)},
      {"train.reduction", c.reduction == Reduction::kMean ? "mean" : "sum"},
      {"train.contour_radius", format_double(c.targets.contour_radius)},
      {"train.distance_scaling",
       c.targets.distance.scaling == DistanceScaling::kPerImageMax ? "max" : "fixed"},
      {"train.distance_divisor", format_double(c.targets.distance.divisor)},
  };
}

/// Returns false when the key is not a NetConfig key.
inline bool apply_key_value(NetConfig& c, const std::string& key, const std::string& value) {
  auto u = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
  if (key == "net.variant") c.variant = parse_variant(value);
  else if (key == "net.num_classes") c.num_classes = u();
  else if (key == "net.stages") c.stages = u();
  else if (key == "net.base_channels") c.base_channels = u();
  else if (key == "net.bottleneck_upsample") c.bottleneck_upsample = u();
  else if (key == "net.convs_per_stage") c.convs_per_stage = u();
  else if (key == "net.input_channels") c.input_channels = u();
  else if (key == "net.input_height") c.input_height = u();
  else if (key == "net.input_width") c.input_width = u();
  else return false;
  return true;
}

inline bool apply_key_value(TrainConfig& c, const std::string& key, const std::string& value) {
  auto d = [&] { return parse_double(key, value); };
  auto u = [&] { return parse_uint(key, value); };
  if (key == "train.epochs") c.epochs = u();
  else if (key == "train.learning_rate") c.learning_rate = d();
  else if (key == "train.batch_size") c.batch_size = u();
  else if (key == "train.lambda1") c.weights.mask = d();
  else if (key == "train.lambda2") c.weights.contour = d();
  else if (key == "train.lambda3") c.weights.distance = d();
  else if (key == "train.seed") c.seed = u();
  else if (key == "train.adam_beta1") c.adam_beta1 = d();
  else if (key == "train.adam_beta2") c.adam_beta2 = d();
  else if (key == "train.adam_epsilon") c.adam_epsilon = d();
  else if (key == "train.split_fraction") c.split_fraction = d();
  else if (key == "train.reduction") {
    if (value == "mean") c.reduction = Reduction::kMean;
    else if (value == "sum") c.reduction = Reduction::kSum;
    else throw ConfigError("bad value for train.reduction: '" + value + "'");
  } else if (key == "train.contour_radius") c.targets.contour_radius = d();
  else if (key == "train.distance_scaling") {
    if (value == "max") c.targets.distance.scaling = DistanceScaling::kPerImageMax;
    else if (value == "fixed") c.targets.distance.scaling = DistanceScaling::kFixedDivisor;
    else throw ConfigError("bad value for train.distance_scaling: '" + value + "'");
  } else if (key == "train.distance_divisor") c.targets.distance.divisor = d();
  else return false;
  return true;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Parses "key=value" lines; blank lines and lines starting with '#' are skipped.
inline KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    out[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace psinet
