#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "psinet/synth.hpp"
#include "psinet/trainer.hpp"

namespace psinet {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("psinet_trainer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<Sample> synth_set(std::size_t n, std::uint64_t seed, std::size_t side = 32) {
  SynthOptions opt;
  opt.height = opt.width = side;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = synth_sample(opt, seed, i);
    out.push_back(make_sample("s" + std::to_string(i), std::move(s.image), std::move(s.mask), 2));
  }
  return out;
}

NetConfig tiny(Variant v = Variant::kMCD) {
  NetConfig c;
  c.variant = v;
  c.stages = 2;
  c.base_channels = 4;
  c.input_channels = 1;
  c.input_height = c.input_width = 32;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(SplitTest, SizesAndPartition) {
  const auto [tr, te] = split_indices(10, 0.7, 3);
  EXPECT_EQ(tr.size(), 7u);
  EXPECT_EQ(te.size(), 3u);
  std::set<std::size_t> all(tr.begin(), tr.end());
  for (auto i : te) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(*all.rbegin(), 9u);
  EXPECT_EQ(split_indices(10, 0.7, 3), split_indices(10, 0.7, 3));
  EXPECT_NE(split_indices(10, 0.7, 3).first, split_indices(10, 0.7, 4).first);
}

TEST(SplitTest, RejectsEmptySide) {
  EXPECT_THROW(split_indices(2, 0.2, 0), std::invalid_argument);
  EXPECT_THROW(split_indices(2, 0.9, 0), std::invalid_argument);
  EXPECT_THROW(split_indices(0, 0.5, 0), std::invalid_argument);
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  std::map<std::string, Tensor<float>> params{{"w", Tensor<float>::from({3}, {1, -2, 3})}};
  params["w"].set_requires_grad();
  AdamState<float> st;
  for (int i = 0; i < 5; ++i) adam_step(params, st, {});
  EXPECT_EQ(std::vector<float>(params["w"].data().begin(), params["w"].data().end()), (std::vector<float>{1, -2, 3}));
  for (float m : st.moments["w"].first) EXPECT_EQ(m, 0.0f);
  EXPECT_EQ(st.step, 5u);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  std::map<std::string, Tensor<double>> params{{"w", Tensor<double>::scalar(0.5)}};
  params["w"].set_requires_grad();
  params["w"].mutable_grad()[0] = 1.0;
  AdamState<double> st;
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  adam_step(params, st, cfg);
  EXPECT_NEAR(params["w"].item(), 0.5 - 0.1 / (1 + 1e-8), 1e-15);
}

TEST(AdamTest, MinimizesQuadratic) {
  std::map<std::string, Tensor<double>> params{{"w", Tensor<double>::scalar(1.0)}};
  auto& w = params["w"];
  w.set_requires_grad();
  AdamState<double> st;
  int steps = 0;
  while (std::abs(w.item()) >= 0.01 && steps < 500) {
    w.zero_grad();
    backward(mul(w, w));
    adam_step(params, st, {0.1, 0.9, 0.999, 1e-8});
    ++steps;
  }
  EXPECT_LT(std::abs(w.item()), 0.01);
  EXPECT_LE(steps, 500);
}

TEST(AdamTest, RejectsMismatchedMoments) {
  std::map<std::string, Tensor<float>> params{{"w", Tensor<float>::zeros({3})}};
  AdamState<float> st;
  st.moments["w"] = {{0, 0}, {0, 0}};
  EXPECT_THROW(adam_step(params, st, {}), ShapeError);
}

TEST(TrainTest, StepCountAndLogs) {
  const auto data = synth_set(8, 1);
  auto net = PsiNet<float>::build(tiny(), 0);
  AdamState<float> adam;
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto dir = scratch("steps");
  TrainHooks hooks;
  hooks.out_dir = dir;
  hooks.widths = {1, 3};
  const auto log = train(net, adam, data, synth_set(2, 2), cfg, hooks);
  ASSERT_EQ(log.steps.size(), 2u);
  EXPECT_EQ(log.steps[0].step, 1u);
  EXPECT_EQ(log.steps[1].epoch, 1u);
  EXPECT_EQ(adam.step, 2u);
  ASSERT_EQ(log.epochs.size(), 1u);
  for (const char* f : {"loss.csv", "epoch_metrics.csv", "checkpoint_last.psin", "checkpoint_best.psin"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  std::ifstream csv(dir / "loss.csv");
  std::string header, row;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,epoch,mask_loss,contour_loss,distance_loss,total");
  std::size_t rows = 0;
  while (std::getline(csv, row)) ++rows;
  EXPECT_EQ(rows, 2u);
  std::ifstream ep(dir / "epoch_metrics.csv");
  std::getline(ep, header);
  EXPECT_EQ(header, "epoch,class,samples,dice,jaccard,hausdorff,hausdorff_undefined,trimap_1,trimap_3");
}

TEST(TrainTest, PartialLastBatch) {
  auto net = PsiNet<float>::build(tiny(Variant::kM), 0);
  AdamState<float> adam;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  const auto log = train(net, adam, synth_set(5, 3), {}, cfg);
  EXPECT_EQ(log.steps.size(), 4u);
  EXPECT_EQ(log.steps[3].step, 4u);
  EXPECT_EQ(log.steps[3].epoch, 2u);
}

TEST(TrainTest, LossDecreasesWhenOverfitting) {
  auto net = PsiNet<float>::build(tiny(), 1);
  AdamState<float> adam;
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 1e-3;
  const auto log = train(net, adam, synth_set(4, 4), {}, cfg);
  ASSERT_EQ(log.steps.size(), 20u);
  EXPECT_LT(log.steps[19].loss.total, log.steps[0].loss.total);
}

TEST(TrainTest, TotalIsWeightedSum) {
  auto net = PsiNet<float>::build(tiny(), 2);
  AdamState<float> adam;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.weights = {0.7, 1.9, 0.4};
  for (const auto& s : train(net, adam, synth_set(6, 5), {}, cfg).steps) {
    const auto& b = s.loss;
    const double expect = 0.7 * b.mask_loss + 1.9 * b.contour_loss + 0.4 * b.distance_loss;
    EXPECT_NEAR(b.total, expect, 1e-6 * expect);
  }
}

TEST(TrainTest, DeterministicRuns) {
  const auto data = synth_set(6, 6), val = synth_set(2, 7);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 42;
  std::vector<fs::path> dirs{scratch("det_a"), scratch("det_b")};
  for (const auto& d : dirs) {
    auto net = PsiNet<float>::build(tiny(), cfg.seed);
    AdamState<float> adam;
    TrainHooks hooks;
    hooks.out_dir = d;
    train(net, adam, data, val, cfg, hooks);
  }
  EXPECT_EQ(slurp(dirs[0] / "loss.csv"), slurp(dirs[1] / "loss.csv"));
  EXPECT_EQ(slurp(dirs[0] / "checkpoint_last.psin"), slurp(dirs[1] / "checkpoint_last.psin"));
  EXPECT_EQ(slurp(dirs[0] / "epoch_metrics.csv"), slurp(dirs[1] / "epoch_metrics.csv"));
}

TEST(TrainTest, NonFiniteLossAborts) {
  auto data = synth_set(4, 8);
  data[2].image.values[5] = std::numeric_limits<float>::quiet_NaN();
  auto net = PsiNet<float>::build(tiny(), 0);
  AdamState<float> adam;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  try {
    train(net, adam, data, {}, cfg);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos);
    EXPECT_NE(msg.find("s2"), std::string::npos);
  }
}

TEST(TrainTest, EpochHookStopsTraining) {
  auto net = PsiNet<float>::build(tiny(Variant::kM), 0);
  AdamState<float> adam;
  TrainConfig cfg;
  cfg.epochs = 10;
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r, const PsiNet<float>&) { return r.epoch < 3; };
  EXPECT_EQ(train(net, adam, synth_set(4, 9), synth_set(2, 9), cfg, hooks).epochs.size(), 3u);
}

TEST(CheckpointTest, RoundTripIsExact) {
  auto net = PsiNet<float>::build(tiny(), 3);
  AdamState<float> adam;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 3e-4;
  cfg.weights = {1, 0.5, 2};
  train(net, adam, synth_set(4, 10), {}, cfg);
  const auto path = scratch("ckpt") / "c.psin";
  save_checkpoint(path, net, adam, cfg);
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.net, net.config());
  EXPECT_EQ(ck.adam, adam);
  EXPECT_EQ(ck.train.learning_rate, cfg.learning_rate);
  EXPECT_EQ(ck.train.weights.contour, 0.5);
  const auto restored = restore_net(ck);
  const auto data = synth_set(1, 11);
  const Image* im[] = {&data[0].image};
  const auto x = image_tensor<float>(im);
  const auto a = net.forward(x), b = restored.forward(x);
  EXPECT_TRUE(std::equal(a.mask_probs.data().begin(), a.mask_probs.data().end(), b.mask_probs.data().begin()));
  EXPECT_TRUE(std::equal(a.distance->data().begin(), a.distance->data().end(), b.distance->data().begin()));
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
}

TEST(CheckpointTest, CorruptFilesAreRejected) {
  const auto net = PsiNet<float>::build(tiny(), 0);
  const auto bytes = encode_checkpoint(make_checkpoint(net, {}, {}));
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<long>(cut))),
                 CheckpointError)
        << cut;
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  EXPECT_THROW(load_checkpoint(scratch("missing") / "none.psin"), CheckpointError);
}

TEST(CheckpointTest, VariantMismatchRefused) {
  const auto md = PsiNet<float>::build(tiny(Variant::kMD), 0);
  auto mcd = PsiNet<float>::build(tiny(Variant::kMCD), 0);
  const auto ck = decode_checkpoint(encode_checkpoint(make_checkpoint(md, {}, {})));
  EXPECT_THROW(load_into(mcd, ck), CheckpointError);
  auto md2 = PsiNet<float>::build(tiny(Variant::kMD), 9);
  EXPECT_NO_THROW(load_into(md2, ck));
}

TEST(EvaluateTest, PerfectPredictorScoresOne) {
  const auto data = synth_set(3, 12);
  std::vector<MetricReport> reports;
  for (const auto& s : data) reports.push_back(evaluate_pair(s.mask, s.mask, 2));
  EXPECT_EQ(mean_foreground_dice(reports), 1.0);
  const auto masks = argmax_masks(Tensor<float>::from({1, 2, 1, 3}, {0.5f, 0.9f, 0.2f, 0.5f, 0.1f, 0.8f}));
  EXPECT_EQ(masks[0].values, (std::vector<std::uint8_t>{0, 0, 1}));
}

}  // namespace
}  // namespace psinet
