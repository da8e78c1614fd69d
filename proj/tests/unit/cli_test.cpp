#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "oracles.hpp"

namespace psinet::cli {
namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t file_count(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("psinet_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }

  fs::path make_data(std::size_t count, std::size_t max_instances = 1, std::uint64_t seed = 7) {
    SynthArgs a;
    a.out = root_ / "data";
    a.count = count;
    a.seed = seed;
    a.options.height = a.options.width = 32;
    a.options.max_instances = max_instances;
    std::ostringstream sink;
    EXPECT_EQ(cmd_synth(a, sink), 0);
    return a.out;
  }

  RunConfig small_run(const std::string& variant) {
    NetFlags nf;
    nf.variant = variant;
    nf.stages = 2;
    nf.base_channels = 4;
    TrainFlags tf;
    tf.epochs = 1;
    tf.lr = 1e-3;
    return resolve_config(std::nullopt, nf, tf);
  }

  fs::path train_run(const fs::path& data, const std::string& variant, const std::string& name) {
    TrainArgs t{data, root_ / name, small_run(variant)};
    std::ostringstream sink;
    EXPECT_EQ(cmd_train(t, sink), 0);
    return t.out;
  }

  fs::path root_;
};

TEST_F(CliTest, SynthIsReproducible) {
  const auto data = make_data(16);
  EXPECT_EQ(file_count(data / "images"), 16u);
  EXPECT_EQ(file_count(data / "masks"), 16u);
  const auto first = slurp(data / "masks" / "sample_0003.png");
  const auto image = slurp(data / "images" / "sample_0003.png");
  make_data(16);
  EXPECT_EQ(slurp(data / "masks" / "sample_0003.png"), first);
  EXPECT_EQ(slurp(data / "images" / "sample_0003.png"), image);
}

TEST_F(CliTest, SynthMultiInstance) {
  SynthArgs a;
  a.out = root_ / "multi";
  a.count = 10;
  a.options.min_instances = 2;
  a.options.max_instances = 3;
  std::ostringstream sink;
  cmd_synth(a, sink);
  for (const auto& f : png_files(a.out / "masks")) {
    const Mask m = read_mask(f);
    EXPECT_GE(oracle::count_components(m), 2) << f;
    EXPECT_NO_THROW(validate_labels(m, 2));
  }
}

TEST_F(CliTest, DeriveWritesOnePairPerMaskAndIsIdempotent) {
  const auto data = make_data(10);
  DeriveArgs d{data, root_ / "derived", 2, {}};
  std::ostringstream out;
  EXPECT_EQ(cmd_derive(d, out), 0);
  EXPECT_NE(out.str().find("derived 10"), std::string::npos);
  EXPECT_EQ(file_count(d.out / "contours"), 10u);
  EXPECT_EQ(file_count(d.out / "distances"), 10u);
  const auto c = slurp(d.out / "contours" / "sample_0000.png");
  const auto dist = slurp(d.out / "distances" / "sample_0000.png");
  cmd_derive(d, out);
  EXPECT_EQ(slurp(d.out / "contours" / "sample_0000.png"), c);
  EXPECT_EQ(slurp(d.out / "distances" / "sample_0000.png"), dist);
  // Stored targets agree with derivation on the fly.
  const Targets t = derive_targets(read_mask(data / "masks" / "sample_0000.png"), 2);
  EXPECT_EQ(read_mask(d.out / "contours" / "sample_0000.png"), t.contour);
}

TEST_F(CliTest, DeriveNamesBadMasks) {
  const auto data = make_data(3);
  Mask bad(8, 8);
  bad.at(2, 3) = 5;
  write_mask(data / "masks" / "broken.png", bad);
  std::ofstream(data / "masks" / "garbage.png") << "xx";
  std::ostringstream out, err;
  const int rc = run_reporting([&] { return cmd_derive({data, root_ / "derived", 2, {}}, out); }, err);
  EXPECT_NE(rc, 0);
  EXPECT_NE(err.str().find("broken.png"), std::string::npos);
  EXPECT_NE(err.str().find("garbage.png"), std::string::npos);
  EXPECT_EQ(file_count(root_ / "derived" / "contours"), 3u);
}

TEST_F(CliTest, ConfigFileAndFlagPrecedence) {
  const auto cfg = root_ / "run.cfg";
  std::ofstream(cfg) << "# comment\nnet.variant = md\nnet.stages=2\ntrain.epochs=9\ntrain.lambda2=0.25\n";
  NetFlags nf;
  TrainFlags tf;
  tf.epochs = 3;
  const auto rc = resolve_config(cfg, nf, tf);
  EXPECT_EQ(rc.net.variant, Variant::kMD);
  EXPECT_EQ(rc.net.stages, 2u);
  EXPECT_EQ(rc.train.epochs, 3u);
  EXPECT_EQ(rc.train.weights.contour, 0.25);
  EXPECT_TRUE(rc.lambda2_set);
  EXPECT_FALSE(rc.lambda3_set);

  std::ofstream(cfg) << "net.variant=m\ntrain.bogus=1\nnet.stages=x\n";
  try {
    resolve_config(cfg, nf, tf);
    FAIL();
  } catch (const CommandError& e) {
    ASSERT_EQ(e.problems().size(), 2u);
    EXPECT_NE(e.problems()[0].find("net.stages"), std::string::npos);
    EXPECT_NE(e.problems()[1].find("train.bogus"), std::string::npos);
  }
}

TEST_F(CliTest, TrainProducesArtifactsAndIsDeterministic) {
  const auto data = make_data(6);
  const auto a = train_run(data, "mcd", "run_a");
  const auto b = train_run(data, "mcd", "run_b");
  for (const char* f : {"checkpoint_last.psin", "checkpoint_best.psin", "loss.csv", "epoch_metrics.csv", "config.txt",
                        "split.csv"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  EXPECT_EQ(slurp(a / "loss.csv"), slurp(b / "loss.csv"));
  EXPECT_EQ(slurp(a / "checkpoint_last.psin"), slurp(b / "checkpoint_last.psin"));
  EXPECT_EQ(lines(a / "split.csv").size(), 7u);
}

TEST_F(CliTest, TrainWarnsAboutIgnoredWeights) {
  const auto data = make_data(4);
  TrainFlags tf;
  tf.lambda2 = 0.5;
  NetFlags nf;
  nf.variant = "m";
  nf.stages = 2;
  nf.base_channels = 4;
  tf.epochs = 1;
  const auto rc = resolve_config(std::nullopt, nf, tf);
  std::ostringstream out;
  EXPECT_EQ(cmd_train({data, root_ / "run", rc}, out), 0);
  EXPECT_NE(out.str().find("lambda2 is ignored"), std::string::npos);
  EXPECT_EQ(out.str().find("lambda3"), std::string::npos);
}

TEST_F(CliTest, TrainRejectsBadInputsBeforeTraining) {
  std::ostringstream out;
  EXPECT_THROW(cmd_train({root_ / "nowhere", root_ / "run", small_run("m")}, out), CommandError);
  const auto data = make_data(4);
  auto rc = small_run("m");
  rc.train.batch_size = 0;
  EXPECT_THROW(cmd_train({data, root_ / "run", rc}, out), CommandError);
  EXPECT_FALSE(fs::exists(root_ / "run" / "loss.csv"));
  // Mixed image sizes are reported unless a size is requested.
  write_image(data / "images" / "odd.png", Image(1, 16, 16));
  write_mask(data / "masks" / "odd.png", Mask(16, 16));
  try {
    cmd_train({data, root_ / "run", small_run("m")}, out);
    FAIL();
  } catch (const CommandError& e) {
    EXPECT_NE(std::string(e.what()).find("odd"), std::string::npos);
  }
  rc = small_run("m");
  rc.net.input_height = rc.net.input_width = 32;
  rc.input_size_set = true;
  EXPECT_EQ(cmd_train({data, root_ / "run", rc}, out), 0);
}

TEST_F(CliTest, EvalWritesCsvsWithRequestedWidths) {
  const auto data = make_data(6);
  const auto run = train_run(data, "mcd", "run");
  EvalArgs e;
  e.checkpoint = run / "checkpoint_last.psin";
  e.data = data;
  e.out = root_ / "eval";
  e.widths = parse_widths("1,3,5");
  std::ostringstream out;
  EXPECT_EQ(cmd_eval(e, out), 0);
  const auto curve = lines(e.out / "trimap.csv");
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve[0], "class,trimap_1,trimap_3,trimap_5");
  EXPECT_EQ(lines(e.out / "per_sample.csv").size(), 7u);
  EXPECT_EQ(lines(e.out / "aggregate.csv")[0],
            "class,samples,dice,jaccard,hausdorff,hausdorff_undefined,trimap_1,trimap_3,trimap_5");
  e.split = EvalSplit::kTest;
  cmd_eval(e, out);
  EXPECT_EQ(lines(e.out / "per_sample.csv").size(), 3u);
}

TEST_F(CliTest, EvalRejectsVariantMismatch) {
  const auto data = make_data(4);
  const auto run = train_run(data, "md", "run");
  EvalArgs e;
  e.checkpoint = run / "checkpoint_last.psin";
  e.data = data;
  e.out = root_ / "eval";
  e.variant = "mcd";
  std::ostringstream out;
  EXPECT_THROW(cmd_eval(e, out), CommandError);
  EXPECT_THROW(parse_widths("3,1"), CommandError);
  EXPECT_THROW(parse_widths("1,a"), CommandError);
}

TEST_F(CliTest, PredictFileCountsFollowVariant) {
  const auto data = make_data(4);
  const std::vector<fs::path> images{data / "images" / "sample_0000.png", data / "images" / "sample_0001.png"};
  std::ostringstream out;
  for (auto [variant, per_image] : {std::pair<std::string, std::size_t>{"m", 1}, {"mcd", 3}, {"md", 2}}) {
    const auto run = train_run(data, variant, "run_" + variant);
    PredictArgs p{run / "checkpoint_last.psin", root_ / ("pred_" + variant), images};
    EXPECT_EQ(cmd_predict(p, out), 0);
    EXPECT_EQ(file_count(p.out), per_image * images.size()) << variant;
    const Mask m = read_mask(p.out / "sample_0000_mask.png");
    EXPECT_NO_THROW(validate_labels(m, 2));
  }
}

TEST_F(CliTest, PredictNamesExpectedSize) {
  const auto data = make_data(4);
  const auto run = train_run(data, "m", "run");
  write_image(root_ / "big.png", Image(1, 48, 48));
  std::ostringstream out, err;
  const int rc = run_reporting(
      [&] { return cmd_predict({run / "checkpoint_last.psin", root_ / "pred", {root_ / "big.png"}}, out); }, err);
  EXPECT_NE(rc, 0);
  EXPECT_NE(err.str().find("expected 32x32"), std::string::npos);
}

TEST_F(CliTest, EllipseFitFlagChangesResults) {
  const auto data = make_data(6);
  const auto run = train_run(data, "m", "run");
  EvalArgs e;
  e.checkpoint = run / "checkpoint_last.psin";
  e.data = data;
  e.out = root_ / "plain";
  std::ostringstream out;
  cmd_eval(e, out);
  e.ellipse_fit = true;
  e.out = root_ / "fitted";
  cmd_eval(e, out);
  EXPECT_NE(slurp(root_ / "plain" / "per_sample.csv"), slurp(root_ / "fitted" / "per_sample.csv"));
}

}  // namespace
}  // namespace psinet::cli
