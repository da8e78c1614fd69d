#pragma once

// Implementation of the psinet subcommands. main.cpp only parses flags.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "psinet/image_io.hpp"
#include "psinet/synth.hpp"
#include "psinet/trainer.hpp"

namespace psinet::cli {

namespace fs = std::filesystem;

/// Failure that has already been reported line by line; carries the lines.
class CommandError : public std::runtime_error {
 public:
  explicit CommandError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s;
    for (const auto& line : p) s += (s.empty() ? "" : "\n") + line;
    return s;
  }
  std::vector<std::string> problems_;
};

// ---------------------------------------------------------------------------
// Configuration: optional key=value file, then flags on top.

struct NetFlags {
  std::optional<std::string> variant;
  std::optional<std::size_t> classes;
  std::optional<std::size_t> stages;
  std::optional<std::size_t> base_channels;
  std::optional<std::size_t> bottleneck_upsample;
  std::optional<std::size_t> convs_per_stage;
  std::optional<std::size_t> size;  // square input side; images are cropped and resized to it
};

struct TrainFlags {
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<double> lambda1, lambda2, lambda3;
  std::optional<std::uint64_t> seed;
  std::optional<double> split;
};

struct RunConfig {
  NetConfig net;
  TrainConfig train;
  bool input_size_set = false;  // net.input_height/width given explicitly
  bool lambda2_set = false;
  bool lambda3_set = false;
};

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CommandError({"cannot read config file " + path.string()});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig resolve_config(const std::optional<fs::path>& config_file, const NetFlags& nf,
                                const TrainFlags& tf) {
  RunConfig rc;
  if (config_file) {
    std::vector<std::string> problems;
    KeyValues kv;
    try {
      kv = parse_key_values(read_text(*config_file));
    } catch (const ConfigError& e) {
      throw CommandError({config_file->string() + ": " + e.what()});
    }
    for (const auto& [key, value] : kv) {
      try {
        if (!apply_key_value(rc.net, key, value) && !apply_key_value(rc.train, key, value)) {
          problems.push_back(config_file->string() + ": unknown key '" + key + "'");
        }
      } catch (const std::invalid_argument& e) {
        problems.push_back(config_file->string() + ": " + e.what());
      }
    }
    if (!problems.empty()) throw CommandError(problems);
    rc.input_size_set = kv.count("net.input_height") || kv.count("net.input_width");
    rc.lambda2_set = kv.count("train.lambda2") > 0;
    rc.lambda3_set = kv.count("train.lambda3") > 0;
  }
  try {
    if (nf.variant) rc.net.variant = parse_variant(*nf.variant);
  } catch (const std::invalid_argument& e) {
    throw CommandError({e.what()});
  }
  if (nf.classes) rc.net.num_classes = *nf.classes;
  if (nf.stages) rc.net.stages = *nf.stages;
  if (nf.base_channels) rc.net.base_channels = *nf.base_channels;
  if (nf.bottleneck_upsample) rc.net.bottleneck_upsample = *nf.bottleneck_upsample;
  if (nf.convs_per_stage) rc.net.convs_per_stage = *nf.convs_per_stage;
  if (nf.size) {
    rc.net.input_height = rc.net.input_width = *nf.size;
    rc.input_size_set = true;
  }
  if (tf.epochs) rc.train.epochs = *tf.epochs;
  if (tf.lr) rc.train.learning_rate = *tf.lr;
  if (tf.batch) rc.train.batch_size = *tf.batch;
  if (tf.lambda1) rc.train.weights.mask = *tf.lambda1;
  if (tf.lambda2) rc.train.weights.contour = *tf.lambda2, rc.lambda2_set = true;
  if (tf.lambda3) rc.train.weights.distance = *tf.lambda3, rc.lambda3_set = true;
  if (tf.seed) rc.train.seed = *tf.seed;
  if (tf.split) rc.train.split_fraction = *tf.split;
  return rc;
}

// ---------------------------------------------------------------------------
// Dataset directories: images/, masks/, contours/, distances/ with matching stems.

inline std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct LoadOptions {
  std::size_t num_classes = 2;
  TargetOptions targets;
  /// When set, every image and its labels are center-cropped and resized to it.
  std::optional<std::pair<std::size_t, std::size_t>> size;
};

/// Loads every image with its mask. Stored contour/distance maps are used when
/// present for a stem; otherwise they are derived from the mask. All problems
/// are collected and reported together.
inline std::vector<Sample> load_dataset(const fs::path& root, const LoadOptions& opt) {
  const auto images = png_files(root / "images");
  if (images.empty()) throw CommandError({"no PNG images in " + (root / "images").string()});
  std::vector<Sample> out;
  std::vector<std::string> problems;
  for (const auto& ip : images) {
    const std::string stem = ip.stem().string();
    const fs::path mp = root / "masks" / (stem + ".png");
    const fs::path cp = root / "contours" / (stem + ".png");
    const fs::path dp = root / "distances" / (stem + ".png");
    try {
      if (!fs::exists(mp)) throw ImageIoError("missing mask " + mp.string());
      Image im = read_image(ip);
      Mask m = read_mask(mp);
      if (im.height != m.height || im.width != m.width) {
        throw ImageIoError(stem + ": image is " + std::to_string(im.height) + "x" + std::to_string(im.width) +
                           " but mask is " + std::to_string(m.height) + "x" + std::to_string(m.width));
      }
      validate_labels(m, opt.num_classes);
      const bool stored = fs::exists(cp) && fs::exists(dp);
      ContourMap contour;
      DistanceMap distance;
      if (stored) {
        contour = read_mask(cp);
        distance = read_distance(dp);
        if (!contour.same_size(m) || !distance.same_size(m)) {
          throw ImageIoError(stem + ": stored contour/distance size differs from the mask");
        }
        validate_labels(contour, opt.num_classes);
      }
      if (opt.size) {
        const auto [h, w] = *opt.size;
        if (im.height != h || im.width != w) {
          im = preprocess(im, h, w);
          m = preprocess_labels(m, h, w);
          if (stored) {
            contour = preprocess_labels(contour, h, w);
            distance = preprocess_labels(distance, h, w);
          }
        }
      }
      if (stored) {
        out.push_back({stem, std::move(im), std::move(m), std::move(contour), std::move(distance)});
      } else {
        out.push_back(make_sample(stem, std::move(im), std::move(m), opt.num_classes, opt.targets));
      }
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  for (std::size_t i = 1; i < out.size() && problems.empty(); ++i) {
    const Image& a = out[0].image;
    const Image& b = out[i].image;
    if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
      problems.push_back(out[i].id + ": image is " + std::to_string(b.channels) + "x" + std::to_string(b.height) +
                         "x" + std::to_string(b.width) + ", expected " + std::to_string(a.channels) + "x" +
                         std::to_string(a.height) + "x" + std::to_string(a.width) + " like " + out[0].id +
                         " (use --size to resize)");
    }
  }
  if (!problems.empty()) throw CommandError(problems);
  return out;
}

inline std::vector<Sample> select(const std::vector<Sample>& all, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

inline std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    try {
      out.push_back(static_cast<std::size_t>(parse_uint("--widths", t)));
    } catch (const ConfigError&) {
      throw CommandError({"--widths: '" + t + "' is not a positive integer"});
    }
  }
  if (out.empty()) throw CommandError({"--widths: no widths given"});
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] == 0 || (i > 0 && out[i] <= out[i - 1])) {
      throw CommandError({"--widths must be positive and strictly ascending"});
    }
  }
  return out;
}

inline std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CommandError({"cannot write " + path.string()});
  return f;
}

// ---------------------------------------------------------------------------
// derive

struct DeriveArgs {
  fs::path masks;
  fs::path out;
  std::size_t num_classes = 2;
  TargetOptions targets;
};

inline int cmd_derive(const DeriveArgs& a, std::ostream& out) {
  fs::path dir = a.masks;
  if (fs::is_directory(dir / "masks")) dir /= "masks";
  const auto files = png_files(dir);
  if (files.empty()) throw CommandError({"no PNG masks in " + dir.string()});
  fs::create_directories(a.out / "contours");
  fs::create_directories(a.out / "distances");
  std::vector<std::string> problems;
  std::size_t done = 0;
  for (const auto& f : files) {
    try {
      const Mask m = read_mask(f);
      const Targets t = derive_targets(m, a.num_classes, a.targets);
      write_mask(a.out / "contours" / f.filename(), t.contour);
      write_distance(a.out / "distances" / f.filename(), t.distance);
      ++done;
    } catch (const std::exception& e) {
      problems.push_back(f.string() + ": " + e.what());
    }
  }
  out << "derived " << done << " contour and " << done << " distance maps into " << a.out.string() << "\n";
  if (!problems.empty()) throw CommandError(problems);
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  fs::path out;
  std::size_t count = 16;
  std::uint64_t seed = 0;
  SynthOptions options;
};

inline std::string sample_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04zu", i);
  return buf;
}

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count < 1) throw CommandError({"--count must be >= 1"});
  try {
    a.options.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError({e.what()});
  }
  fs::create_directories(a.out / "images");
  fs::create_directories(a.out / "masks");
  for (std::size_t i = 0; i < a.count; ++i) {
    const auto s = synth_sample(a.options, a.seed, i);
    write_image(a.out / "images" / (sample_stem(i) + ".png"), s.image);
    write_mask(a.out / "masks" / (sample_stem(i) + ".png"), s.mask);
  }
  out << "wrote " << a.count << " image/mask pairs to " << a.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path data;
  fs::path out;
  RunConfig config;
};

inline void warn_ignored_weights(const RunConfig& rc, std::ostream& out) {
  const Variant v = rc.net.variant;
  if (rc.lambda2_set && !has_contour(v)) {
    out << "warning: variant " << to_string(v) << " has no contour decoder; lambda2 is ignored\n";
  }
  if (rc.lambda3_set && !has_distance(v)) {
    out << "warning: variant " << to_string(v) << " has no distance decoder; lambda3 is ignored\n";
  }
}

inline void write_split(const fs::path& path, const std::vector<Sample>& all, const std::vector<std::size_t>& tr,
                        const std::vector<std::size_t>& te) {
  auto f = open_csv(path);
  f << "sample_id,split\n";
  for (std::size_t i : tr) f << all[i].id << ",train\n";
  for (std::size_t i : te) f << all[i].id << ",test\n";
}

inline int cmd_train(TrainArgs a, std::ostream& out) {
  RunConfig& rc = a.config;
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError({e.what()});
  }
  LoadOptions lo{rc.net.num_classes, rc.train.targets, std::nullopt};
  if (rc.input_size_set) lo.size = std::pair{rc.net.input_height, rc.net.input_width};
  const auto all = load_dataset(a.data, lo);
  rc.net.input_channels = all[0].image.channels;
  rc.net.input_height = all[0].image.height;
  rc.net.input_width = all[0].image.width;
  try {
    rc.net.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError({e.what()});
  }
  warn_ignored_weights(rc, out);

  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split;
  try {
    split = split_indices(all.size(), rc.train.split_fraction, rc.train.seed);
  } catch (const std::invalid_argument& e) {
    throw CommandError({e.what()});
  }
  const auto train_set = select(all, split.first);
  const auto test_set = select(all, split.second);
  fs::create_directories(a.out);
  write_split(a.out / "split.csv", all, split.first, split.second);
  {
    KeyValues kv = to_key_values(rc.net);
    kv.merge(to_key_values(rc.train));
    auto f = open_csv(a.out / "config.txt");
    f << format_key_values(kv);
  }

  out << "training variant " << to_string(rc.net.variant) << " on " << train_set.size() << " samples, validating on "
      << test_set.size() << "\n";
  auto net = PsiNet<float>::build(rc.net, rc.train.seed);
  AdamState<float> adam;
  TrainHooks hooks;
  hooks.out_dir = a.out;
  hooks.on_epoch = [&](const EpochRecord& rec, const PsiNet<float>&) {
    out << "epoch " << rec.epoch << "/" << rc.train.epochs << " validation dice " << format_double(rec.mean_dice)
        << "\n";
    return true;
  };
  try {
    train(net, adam, train_set, test_set, rc.train, hooks);
  } catch (const NonFiniteLossError& e) {
    throw CommandError({e.what()});
  }
  out << "checkpoints written to " << a.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

enum class EvalSplit { kAll, kTrain, kTest };

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  fs::path out;
  std::vector<std::size_t> widths = default_trimap_widths();
  bool ellipse_fit = false;
  EvalSplit split = EvalSplit::kAll;
  std::optional<std::string> variant;  // when given, must match the checkpoint
  std::size_t batch = 4;
};

inline Checkpoint load_checkpoint_or_fail(const fs::path& path) {
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw CommandError({e.what()});
  }
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint_or_fail(a.checkpoint);
  if (a.variant) {
    Variant v;
    try {
      v = parse_variant(*a.variant);
    } catch (const std::invalid_argument& e) {
      throw CommandError({e.what()});
    }
    if (v != ck.net.variant) {
      throw CommandError({"checkpoint " + a.checkpoint.string() + " holds variant " + to_string(ck.net.variant) +
                          ", not " + to_string(v)});
    }
  }
  const NetConfig& nc = ck.net;
  const auto all = load_dataset(a.data, {nc.num_classes, ck.train.targets, std::pair{nc.input_height, nc.input_width}});
  if (all[0].image.channels != nc.input_channels) {
    throw CommandError({"images have " + std::to_string(all[0].image.channels) + " channel(s), checkpoint expects " +
                        std::to_string(nc.input_channels)});
  }
  std::vector<Sample> samples;
  if (a.split == EvalSplit::kAll) {
    samples = all;
  } else {
    const auto sp = split_indices(all.size(), ck.train.split_fraction, ck.train.seed);
    samples = select(all, a.split == EvalSplit::kTrain ? sp.first : sp.second);
  }
  const auto net = restore_net(ck);
  const auto reports = evaluate(net, samples, a.widths, a.batch, a.ellipse_fit);
  const auto agg = aggregate(reports);

  fs::create_directories(a.out);
  {
    auto f = open_csv(a.out / "per_sample.csv");
    write_sample_header(f, a.widths);
    for (std::size_t i = 0; i < samples.size(); ++i) write_sample_rows(f, samples[i].id, reports[i]);
  }
  {
    auto f = open_csv(a.out / "aggregate.csv");
    write_aggregate_header(f, a.widths);
    write_aggregate_rows(f, agg);
  }
  {
    // Trimap curve: one row per class, one column per width.
    auto f = open_csv(a.out / "trimap.csv");
    f << "class";
    write_trimap_columns(f, a.widths);
    f << '\n';
    for (const auto& c : agg) {
      f << static_cast<int>(c.cls);
      for (const auto& t : c.trimap) f << ',' << csv_value(t.error_fraction);
      f << '\n';
    }
  }
  out << "evaluated " << samples.size() << " samples; mean foreground dice "
      << format_double(mean_foreground_dice(reports)) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  fs::path checkpoint;
  fs::path out;
  std::vector<fs::path> images;
};

inline int cmd_predict(const PredictArgs& a, std::ostream& out) {
  if (a.images.empty()) throw CommandError({"no input images"});
  const Checkpoint ck = load_checkpoint_or_fail(a.checkpoint);
  const NetConfig& nc = ck.net;
  const auto net = restore_net(ck);
  fs::create_directories(a.out);
  std::vector<std::string> problems;
  std::size_t written = 0;
  for (const auto& path : a.images) {
    try {
      const Image im = read_image(path);
      if (im.channels != nc.input_channels || im.height != nc.input_height || im.width != nc.input_width) {
        throw ImageIoError("image is " + std::to_string(im.height) + "x" + std::to_string(im.width) + " with " +
                           std::to_string(im.channels) + " channel(s); expected " + std::to_string(nc.input_height) +
                           "x" + std::to_string(nc.input_width) + " with " + std::to_string(nc.input_channels));
      }
      const Image* one[] = {&im};
      const auto p = net.forward(image_tensor<float>(one));
      const std::string stem = path.stem().string();
      write_mask(a.out / (stem + "_mask.png"), argmax_masks(p.mask_probs)[0]);
      ++written;
      if (p.contour_probs) {
        write_mask(a.out / (stem + "_contour.png"), argmax_masks(*p.contour_probs)[0]);
        ++written;
      }
      if (p.distance) {
        write_distance(a.out / (stem + "_distance.png"), distance_maps(*p.distance)[0]);
        ++written;
      }
    } catch (const std::exception& e) {
      problems.push_back(path.string() + ": " + e.what());
    }
  }
  out << "wrote " << written << " files to " << a.out.string() << "\n";
  if (!problems.empty()) throw CommandError(problems);
  return 0;
}

/// Runs a command, turning failures into one stderr line per problem.
template <class Fn>
int run_reporting(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const CommandError& e) {
    for (const auto& p : e.problems()) err << "error: " << p << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace psinet::cli
