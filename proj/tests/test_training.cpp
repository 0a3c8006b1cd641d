#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "graphfcn/checkpoint.hpp"
#include "graphfcn/data.hpp"
#include "graphfcn/training.hpp"
#include "test_util.hpp"

using namespace gfcn;
using gfcn::testing::random_tensor;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.backbone.c1 = 8;
  cfg.backbone.c2 = 12;
  cfg.backbone.node_stride = 4;
  cfg.backbone.num_classes = 4;
  cfg.gcn_hidden = 16;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("graphfcn_test_" + name);
}

}  // namespace

TEST(TotalLoss, LambdaZeroIsPixelLoss) {
  std::mt19937_64 rng(1);
  auto pix = Var::constant(random_tensor({3, 4, 4}, rng));
  auto nodes = Var::constant(random_tensor({4, 3}, rng));
  LabelMap labels(4, 4, 2);
  std::vector<Label> node_labels{0, 1, 2, 1};
  const double l1 = softmax_cross_entropy(channels_to_rows(pix), labels.data).item();
  EXPECT_EQ(total_loss(pix, labels, nodes, node_labels, 0.0).item(), l1);
}

TEST(TotalLoss, UniformLogitsTwoClasses) {
  auto pix = Var::constant(Tensor({2, 3, 3}));
  auto nodes = Var::constant(Tensor({4, 2}));
  LabelMap labels(3, 3, 1);
  std::vector<Label> node_labels{0, 1, 1, 0};
  for (double lambda : {0.0, 0.5, 1.0, 2.0})
    EXPECT_NEAR(total_loss(pix, labels, nodes, node_labels, lambda).item(), (1 + lambda) * std::log(2.0), 1e-14);
}

TEST(TotalLoss, PerfectLogitsApproachZero) {
  LabelMap labels(2, 2);
  labels.data = {0, 1, 1, 0};
  Tensor pix({2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) pix[labels.data[i] * 4 + i] = 60.0;
  std::vector<Label> node_labels{1};
  auto nodes = Var::constant(Tensor::matrix({{-60, 60}}));
  EXPECT_LT(total_loss(Var::constant(pix), labels, nodes, node_labels, 1.0).item(), 1e-20);
}

TEST(TotalLoss, ShapeMismatch) {
  auto pix = Var::constant(Tensor({2, 3, 3}));
  auto nodes = Var::constant(Tensor({4, 2}));
  LabelMap labels(3, 4, 1);
  std::vector<Label> node_labels{0, 1, 1, 0};
  EXPECT_THROW(total_loss(pix, labels, nodes, node_labels, 1.0), DimensionError);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  ModelParams p;
  p.add("w", Tensor::vector({1.0, -2.0, 0.5}));
  p.at("w").mutable_grad() = Tensor::vector({3.0, -0.01, 1e-3});
  adam_step(p, {0.05, 0.0});
  const auto& w = p.at("w").value();
  EXPECT_NEAR(w[0], 1.0 - 0.05, 1e-9);
  EXPECT_NEAR(w[1], -2.0 + 0.05, 1e-6);
  EXPECT_NEAR(w[2], 0.5 - 0.05, 1e-5);
  EXPECT_EQ(p.at("w").grad(), Tensor({3}));
}

TEST(AdamStep, ZeroGradientZeroDecayLeavesParameters) {
  ModelParams p;
  p.add("w", Tensor::vector({1.0, -2.0}));
  for (int i = 0; i < 5; ++i) adam_step(p, {0.1, 0.0});
  EXPECT_EQ(p.at("w").value(), Tensor::vector({1.0, -2.0}));
}

TEST(AdamStep, DecayNeverGrowsMagnitudeWithoutGradient) {
  ModelParams p;
  p.add("w", Tensor::vector({1.0, -2.0, 0.0}));
  Tensor prev = p.at("w").value();
  for (int i = 0; i < 20; ++i) {
    adam_step(p, {0.1, 0.5});
    for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(std::abs(p.at("w").value()[k]), std::abs(prev[k]));
    prev = p.at("w").value();
  }
  EXPECT_LT(std::abs(prev[0]), 1.0);
}

TEST(AdamStep, QuadraticMatchesScalarReference) {
  ModelParams p;
  p.add("theta", Tensor::vector({1.0}));
  double th = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 50; ++t) {
    Var& var = p.at("theta");
    backward(sum(mul(var, var)));
    adam_step(p, {0.1, 0.0});
    const double g = 2.0 * th;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    th -= 0.1 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    ASSERT_NEAR(p.at("theta").value()[0], th, 1e-14) << "step " << t;
  }
}

TEST(AdamStep, SelectorRestrictsUpdates) {
  ModelParams p;
  p.add("gcn.a", Tensor::vector({1.0}));
  p.add("backbone.b", Tensor::vector({1.0}));
  p.at("gcn.a").mutable_grad()[0] = 1.0;
  p.at("backbone.b").mutable_grad()[0] = 1.0;
  adam_step(p, {0.1, 0.1}, [](const std::string& n) { return is_gcn_param(n); });
  EXPECT_NE(p.at("gcn.a").value()[0], 1.0);
  EXPECT_EQ(p.at("backbone.b").value()[0], 1.0);
  EXPECT_EQ(p.at("backbone.b").grad()[0], 0.0);
}

TEST(EpochPermutation, IsPermutationAndSeedDependent) {
  auto a = epoch_permutation(50, 3, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(a, epoch_permutation(50, 3, 0));
  EXPECT_NE(a, epoch_permutation(50, 3, 1));
  EXPECT_NE(a, epoch_permutation(50, 4, 0));
}

TEST(Train, EmptyDatasetIsRejected) {
  EXPECT_THROW(train({}, {}, tiny_model(), TrainConfig{}), ParameterError);
}

TEST(Train, WarmupFreezesBackbone) {
  const auto data = generate_shapes(4, 32, 32, 4, 1);
  TrainConfig cfg;
  cfg.phase1_iters = 8;
  cfg.epochs = 2;
  const ModelParams init = init_model(tiny_model(), cfg.seed);
  std::size_t checked = 0;
  TrainHooks hooks;
  hooks.on_step = [&](std::size_t iter, const ModelParams& p) {
    if (iter >= cfg.phase1_iters) return;
    for (const auto& e : p.entries()) {
      if (is_gcn_param(e.name)) continue;
      EXPECT_EQ(e.var.value(), init.at(e.name).value()) << e.name << " at " << iter;
      ++checked;
    }
  };
  auto result = train(data, {}, tiny_model(), cfg, hooks);
  EXPECT_GT(checked, 0u);
  EXPECT_FALSE(result.params.at("gcn.theta1").value() == init.at("gcn.theta1").value());
}

TEST(Train, AblationMatchesDetachedHeadBitExactly) {
  const auto data = generate_shapes(3, 32, 32, 4, 2);
  TrainConfig with_head;
  with_head.lambda_node = 0.0;
  with_head.phase1_iters = 0;
  with_head.phase2_lr = 1e-3;
  with_head.epochs = 3;
  TrainConfig detached = with_head;
  detached.gcn_enabled = false;

  std::vector<ModelParams> trajectory;
  TrainHooks record;
  record.on_step = [&](std::size_t, const ModelParams& p) { trajectory.push_back(p.clone()); };
  train(data, {}, tiny_model(), detached, record);

  std::size_t step = 0;
  TrainHooks compare;
  compare.on_step = [&](std::size_t iter, const ModelParams& p) {
    for (const auto& e : p.entries()) {
      if (is_gcn_param(e.name)) continue;
      ASSERT_EQ(e.var.value(), trajectory[step].at(e.name).value()) << e.name << " at step " << iter;
    }
    ++step;
  };
  train(data, {}, tiny_model(), with_head, compare);
  EXPECT_EQ(step, trajectory.size());
}

TEST(Train, DeterministicReport) {
  const auto data = generate_shapes(3, 32, 32, 4, 3);
  const auto test = generate_shapes(2, 32, 32, 4, 4);
  TrainConfig cfg;
  cfg.phase1_iters = 2;
  cfg.epochs = 2;
  const auto a = train(data, test, tiny_model(), cfg);
  const auto b = train(data, test, tiny_model(), cfg);
  EXPECT_EQ(report_csv(a.report), report_csv(b.report));
  EXPECT_TRUE(a.params.same_values(b.params));
  ASSERT_EQ(a.report.epochs.size(), 2u);
  ASSERT_TRUE(a.report.epochs[1].metrics.has_value());
  EXPECT_EQ(a.report.epochs[1].metrics->miou, b.report.epochs[1].metrics->miou);
  EXPECT_EQ(a.report.iterations.size(), 6u);
}

TEST(Train, JointTrainingHalvesLossOnSyntheticSet) {
  const auto data = generate_shapes(5, 32, 32, 4, 5);
  TrainConfig cfg;
  cfg.phase1_iters = 0;
  cfg.phase2_lr = 3e-3;
  cfg.epochs = 40;  // 200 joint steps
  const auto result = train(data, {}, tiny_model(), cfg);
  const auto& it = result.report.iterations;
  ASSERT_EQ(it.size(), 200u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 5; ++i) first += it[i].total;
  for (std::size_t i = it.size() - 5; i < it.size(); ++i) last += it[i].total;
  EXPECT_LE(last, 0.5 * first) << "first epoch " << first / 5 << " last epoch " << last / 5;
}

TEST(Train, ConvergedModelReproducesTrainingLabels) {
  const auto data = generate_shapes(5, 32, 32, 4, 5);
  TrainConfig cfg;
  cfg.phase1_iters = 0;
  cfg.phase2_lr = 3e-3;
  cfg.epochs = 120;
  const auto model = tiny_model();
  const auto result = train(data, {}, model, cfg);
  const auto pred = predict_labels(data[0].image, result.params, model.backbone);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) agree += pred.data[i] == data[0].labels.data[i];
  const double frac = static_cast<double>(agree) / static_cast<double>(pred.size());
  EXPECT_GE(frac, 0.9) << "pixel agreement " << frac;
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  auto data = generate_shapes(2, 32, 32, 4, 6);
  data[1].image.data()[40] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(data, {}, tiny_model(), cfg);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("shape_00001"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto params = init_model(tiny_model(), 7);
  params.at("gcn.theta2").mutable_value()[0] = -0.0;
  params.at("gcn.theta2").mutable_value()[1] = 1e-310;
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(params, path);
  const auto loaded = load_checkpoint(path);
  EXPECT_TRUE(loaded.same_values(params));
  EXPECT_TRUE(std::signbit(loaded.at("gcn.theta2").value()[0]));
  EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(params));
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  ModelParams p;
  p.add("ab", Tensor::vector({1.0}));
  const auto bytes = serialize_checkpoint(p);
  const std::vector<unsigned char> expected_prefix{'G', 'F', 'C', 'N', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0,
                                                   'a', 'b', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0};
  ASSERT_EQ(bytes.size(), expected_prefix.size() + 8);
  EXPECT_TRUE(std::equal(expected_prefix.begin(), expected_prefix.end(), bytes.begin()));
  EXPECT_EQ(bytes.back(), 0x3f);  // 1.0 = 0x3ff0000000000000, little-endian
}

TEST(Checkpoint, TruncatedFileReportsOffset) {
  const auto bytes = serialize_checkpoint(init_model(tiny_model(), 8));
  std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + 100);
  try {
    deserialize_checkpoint(cut);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_LE(e.offset(), 100u);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST(Checkpoint, VersionMismatch) {
  auto bytes = serialize_checkpoint(init_model(tiny_model(), 9));
  bytes[4] = 2;
  EXPECT_THROW(deserialize_checkpoint(bytes), UnsupportedVersionError);
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}
