#pragma once

// Binary checkpoint: parameters, Adam moments and configuration.
//
//   "PSIN"                      magic
//   u32 version                 kCheckpointVersion
//   u32 length, bytes           config block, "key=value\n" lines
//   u32 array count
//   per array:
//     u32 name length, bytes    "param/<name>", "adam.m/<name>", "adam.v/<name>"
//     u32 rank, u32 dims[rank]
//     f32 data[prod(dims)]
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "psinet/adam.hpp"
#include "psinet/config.hpp"
#include "psinet/net.hpp"

namespace psinet {

inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'I', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ArrayMap = std::map<std::string, std::pair<Shape, std::vector<float>>>;

struct Checkpoint {
  NetConfig net;
  TrainConfig train;
  ArrayMap parameters;
  AdamState<float> adam;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void floats(std::span<const float> v) { raw(v.data(), v.size() * 4); }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> buf) : buf_(std::move(buf)) {}
  void raw(void* out, std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v = 0;
    raw(&v, 4, what);
    return v;
  }
  std::string bytes(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  KeyValues kv = to_key_values(ck.net);
  kv.merge(to_key_values(ck.train));
  kv["adam.step"] = std::to_string(ck.adam.step);
  w.bytes(format_key_values(kv));

  std::vector<std::pair<std::string, std::pair<Shape, std::span<const float>>>> arrays;
  for (const auto& [name, a] : ck.parameters) {
    arrays.push_back({"param/" + name, {a.first, a.second}});
  }
  for (const auto& [name, m] : ck.adam.moments) {
    const auto it = ck.parameters.find(name);
    if (it == ck.parameters.end()) throw CheckpointError("adam moments for unknown parameter " + name);
    arrays.push_back({"adam.m/" + name, {it->second.first, m.first}});
    arrays.push_back({"adam.v/" + name, {it->second.first, m.second}});
  }
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, a] : arrays) {
    const auto& [shape, values] = a;
    if (element_count(shape) != values.size()) throw CheckpointError("array " + name + " has wrong size");
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    w.floats(values);
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::string block = r.bytes("config block");
  try {
    for (const auto& [key, value] : parse_key_values(block)) {
      if (key == "adam.step") {
        ck.adam.step = parse_uint(key, value);
      } else if (!apply_key_value(ck.net, key, value) && !apply_key_value(ck.train, key, value)) {
        throw CheckpointError("unknown config key in checkpoint: " + key);
      }
    }
    ck.net.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }

  const std::uint32_t count = r.u32("array count");
  std::map<std::string, std::vector<float>> first, second;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes("array name");
    const std::uint32_t rank = r.u32("array rank");
    if (rank > 8) throw CheckpointError("array " + name + " has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("array dims");
    const std::size_t n = element_count(shape);
    if (n > r.remaining() / 4) throw CheckpointError("checkpoint truncated while reading array data");
    std::vector<float> values(n);
    r.raw(values.data(), values.size() * 4, "array data");
    if (name.starts_with("param/")) {
      ck.parameters[name.substr(6)] = {shape, std::move(values)};
    } else if (name.starts_with("adam.m/")) {
      first[name.substr(7)] = std::move(values);
    } else if (name.starts_with("adam.v/")) {
      second[name.substr(7)] = std::move(values);
    } else {
      throw CheckpointError("unknown array " + name);
    }
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint arrays");

  // Parameter names and shapes must match what the config builds.
  std::size_t expected = 0;
  for (const auto& spec : conv_layout(ck.net)) {
    const std::pair<std::string, Shape> want[] = {
        {spec.name + ".weight", {spec.out_channels, spec.in_channels, 3, 3}},
        {spec.name + ".bias", {spec.out_channels}}};
    for (const auto& [name, shape] : want) {
      auto it = ck.parameters.find(name);
      if (it == ck.parameters.end()) throw CheckpointError("checkpoint is missing parameter " + name);
      if (it->second.first != shape) {
        throw CheckpointError("parameter " + name + " has shape " + to_string(it->second.first) +
                              ", config expects " + to_string(shape));
      }
      ++expected;
    }
  }
  if (ck.parameters.size() != expected) throw CheckpointError("checkpoint has parameters the config does not build");
  for (auto& [name, m] : first) {
    auto p = ck.parameters.find(name);
    auto v = second.find(name);
    if (p == ck.parameters.end() || v == second.end()) {
      throw CheckpointError("incomplete adam moments for " + name);
    }
    if (m.size() != p->second.second.size() || v->second.size() != m.size()) {
      throw CheckpointError("adam moment shape disagrees with parameter " + name);
    }
    ck.adam.moments[name] = {std::move(m), std::move(v->second)};
  }
  if (second.size() != first.size()) throw CheckpointError("incomplete adam moments");
  return ck;
}

inline Checkpoint make_checkpoint(const PsiNet<float>& net, const AdamState<float>& adam,
                                  const TrainConfig& train) {
  Checkpoint ck{net.config(), train, {}, adam};
  for (const auto& [name, p] : net.parameters()) {
    ck.parameters[name] = {p.shape(), std::vector<float>(p.data().begin(), p.data().end())};
  }
  return ck;
}

/// Writes to a sibling temporary file and renames it into place.
inline void save_checkpoint(const std::filesystem::path& path, const PsiNet<float>& net,
                            const AdamState<float>& adam, const TrainConfig& train) {
  const auto bytes = encode_checkpoint(make_checkpoint(net, adam, train));
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(bytes));
}

inline PsiNet<float> restore_net(const Checkpoint& ck) {
  return PsiNet<float>::from_parameters(ck.net, ck.parameters);
}

/// Restores into a network that must have been built with an identical config.
inline void load_into(PsiNet<float>& net, const Checkpoint& ck) {
  if (!(net.config() == ck.net)) {
    throw CheckpointError("checkpoint config (variant " + to_string(ck.net.variant) +
                          ") does not match the network (variant " + to_string(net.config().variant) + ")");
  }
  net = restore_net(ck);
}

}  // namespace psinet
