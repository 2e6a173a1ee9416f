#include "fairsparse/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fairsparse/errors.hpp"
#include "fairsparse/group_metrics.hpp"
#include "test_util.hpp"

namespace fairsparse {
namespace {

const MlpSpec kSpec{4, {6, 5}, 3};

TEST(Model, SpecValidation) {
  EXPECT_NO_THROW(kSpec.validate());
  EXPECT_THROW((MlpSpec{4, {}, 3}.validate()), ConfigError);
  EXPECT_THROW((MlpSpec{0, {3}, 3}.validate()), ConfigError);
  EXPECT_THROW((MlpSpec{4, {3, 0}, 3}.validate()), ConfigError);
  EXPECT_THROW((MlpSpec{4, {3}, 1}.validate()), ConfigError);
  // one hidden layer: valid model, but nothing to prune
  EXPECT_NO_THROW((MlpSpec{4, {3}, 2}.validate()));
  EXPECT_THROW((MlpSpec{4, {3}, 2}.validate_for_pruning()), ConfigError);
}

TEST(Model, InitIsDeterministicDenseAndBounded) {
  const auto a = MaskedMlp::init(kSpec, 11);
  const auto b = MaskedMlp::init(kSpec, 11);
  const auto c = MaskedMlp::init(kSpec, 12);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  EXPECT_EQ(a.sparsity(), 0.0);
  for (const auto& layer : a.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.fan_in()));
    for (double w : layer.weight.values()) EXPECT_LE(std::abs(w), bound);
    for (double v : layer.bias.values()) EXPECT_EQ(v, 0.0);
    for (auto m : layer.mask) EXPECT_EQ(m, 1);
  }
}

TEST(Model, ForwardHandComputed) {
  // 2 -> 2 -> 2, relu hidden layer
  std::vector<Layer> layers(2);
  layers[0].weight = Tensor::matrix(2, 2, {1, -1, 0.5, 2});
  layers[0].bias = Tensor::vector({0.0, -1.0});
  layers[0].mask = {1, 1, 1, 1};
  layers[1].weight = Tensor::matrix(2, 2, {1, 1, -2, 3});
  layers[1].bias = Tensor::vector({0.5, 0.0});
  layers[1].mask = {1, 1, 1, 1};
  MaskedMlp m(MlpSpec{2, {2}, 2}, std::move(layers));
  // x = (1, 2): h = relu(1 - 2, 0.5 + 4 - 1) = (0, 3.5)
  // z = (0 + 3.5 + 0.5, 0 + 10.5) = (4, 10.5)
  const auto z = m.logits(Tensor::matrix(1, 2, {1, 2}));
  EXPECT_DOUBLE_EQ(z.at(0), 4.0);
  EXPECT_DOUBLE_EQ(z.at(1), 10.5);
}

TEST(Model, AllMasksZeroGivesPropagatedBiases) {
  auto m = MaskedMlp::init(kSpec, 3);
  for (auto& layer : m.layers()) {
    std::fill(layer.mask.begin(), layer.mask.end(), 0);
    for (double& b : layer.bias.mutable_values()) b = 0.25;
  }
  const auto z1 = m.logits(Tensor::matrix(1, 4, {1, 2, 3, 4}));
  const auto z2 = m.logits(Tensor::matrix(1, 4, {-9, 0, 7, 1}));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(z1.at(j), 0.25);
    EXPECT_EQ(z2.at(j), 0.25);
  }
}

TEST(Model, EmptyBatchAndDimensionErrors) {
  const auto m = MaskedMlp::init(kSpec, 3);
  const auto z = m.logits(Tensor::zeros({0, 4}));
  EXPECT_EQ(z.shape(), (Shape{0, 3}));
  EXPECT_THROW(m.logits(Tensor::zeros({2, 5})), DimensionError);
}

TEST(Model, TapedForwardMatchesInference) {
  const auto m = MaskedMlp::init(kSpec, 5);
  const auto data = testing::random_dataset(17, 4, 3, 2, 1);
  const Tensor x = data.feature_rows(0, data.size());
  Tape tape;
  const auto fwd = m.forward(tape, tape.constant(x));
  const auto a = tape.value(fwd.logits).values();
  const auto b = m.logits(x);
  ASSERT_EQ(a.size(), b.numel());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b.at(i));
}

TEST(ModelProperty, MaskedForwardEqualsHardZeroedForward) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = MaskedMlp::init(kSpec, seed);
    std::mt19937_64 rng(seed);
    for (auto& layer : m.layers())
      for (auto& bit : layer.mask) bit = rng() % 3 == 0 ? 0 : 1;
    MaskedMlp zeroed = m;
    zeroed.apply_masks();
    for (auto& layer : zeroed.layers()) std::fill(layer.mask.begin(), layer.mask.end(), 1);
    const auto data = testing::random_dataset(9, 4, 3, 1, seed);
    const Tensor x = data.feature_rows(0, data.size());
    const auto a = m.logits(x), b = zeroed.logits(x);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
  }
}

TEST(Model, Predict) {
  EXPECT_EQ(predict(Tensor::matrix(1, 3, {0, 0, 0}))[0], 0);
  EXPECT_EQ(predict(Tensor::matrix(1, 3, {1, 3, 2}))[0], 1);
  EXPECT_EQ(predict(Tensor::matrix(1, 2, {-5, -1}))[0], 1);
}

TEST(ModelProperty, PredictShiftInvariant) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    // Quarter-grid logits produce ties; shifts by small integers stay exact.
    std::vector<double> z(4), shifted(4);
    const double c = std::round(n(rng) * 10);
    for (std::size_t i = 0; i < 4; ++i) {
      z[i] = std::round(n(rng) * 4) / 4;
      shifted[i] = z[i] + c;
    }
    EXPECT_EQ(predict(Tensor::matrix(1, 4, z))[0], predict(Tensor::matrix(1, 4, shifted))[0]);
  }
}

TEST(Model, PerSampleAccuracy) {
  const Tensor logits = Tensor::matrix(3, 2, {2, 1, 0, 5, 3, 3});
  const std::vector<int> perfect = {0, 1, 0};
  for (auto c : per_sample_accuracy(logits, perfect)) EXPECT_EQ(c, 1);
  const std::vector<int> wrong = {1, 0, 1};
  for (auto c : per_sample_accuracy(logits, wrong)) EXPECT_EQ(c, 0);
  const std::vector<int> mixed = {0, 0, 1};
  const auto pred = predict(logits);
  const auto got = per_sample_accuracy(logits, mixed);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(got[i], pred[i] == mixed[i] ? 1 : 0);
  const std::vector<int> bad = {0, 2, 0};
  EXPECT_THROW(per_sample_accuracy(logits, bad), IndexError);
}

TEST(Model, PrunableLayers) {
  auto three = MaskedMlp::init(MlpSpec{3, {4, 4}, 2}, 1);
  auto p3 = prunable_layers(three);
  ASSERT_EQ(p3.size(), 1u);
  EXPECT_EQ(p3[0].index, 2u);

  auto five = MaskedMlp::init(MlpSpec{3, {4, 4, 4, 4}, 2}, 1);
  auto p5 = prunable_layers(five);
  ASSERT_EQ(p5.size(), 3u);
  EXPECT_EQ(p5[0].index, 2u);
  EXPECT_EQ(p5[1].index, 3u);
  EXPECT_EQ(p5[2].index, 4u);
  EXPECT_FALSE(five.layers().front().prunable);
  EXPECT_FALSE(five.layers().back().prunable);
}

TEST(Model, SnapshotBaselineConstantPredictor) {
  // Zero weights with a bias favouring class 1: every prediction is 1.
  auto m = MaskedMlp::init(MlpSpec{2, {3, 3}, 3}, 1);
  for (auto& layer : m.layers()) std::fill(layer.mask.begin(), layer.mask.end(), 0);
  m.layers().back().bias = Tensor::vector({0.0, 1.0, 0.0});
  GroupedDataset data(2, std::vector<double>(2 * 7, 0.5), {1, 1, 0, 2, 1, 0, 1},
                      {0, 0, 0, 0, 1, 1, 1}, {"a", "b"}, 3);
  const auto snap = snapshot_baseline(m, data);
  EXPECT_DOUBLE_EQ(snap.group_accuracy[0], 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(snap.group_accuracy[1], 2.0 / 3.0);
  EXPECT_NEAR(snap.accuracy, 4.0 / 7.0, 1e-15);
  EXPECT_NEAR(snap.accuracy, (4 * snap.group_accuracy[0] + 3 * snap.group_accuracy[1]) / 7, 1e-12);
}

TEST(Model, SnapshotBaselineSymmetricGroups) {
  const auto m = MaskedMlp::init(MlpSpec{3, {5, 5}, 2}, 2);
  auto base = testing::random_dataset(10, 3, 2, 1, 4);
  std::vector<double> x = base.features();
  x.insert(x.end(), base.features().begin(), base.features().end());
  std::vector<int> y = base.labels();
  y.insert(y.end(), base.labels().begin(), base.labels().end());
  std::vector<int> g(10, 0);
  g.insert(g.end(), 10, 1);
  GroupedDataset twin(3, x, y, g, {"a", "b"}, 2);
  const auto s = snapshot_baseline(m, twin);
  EXPECT_EQ(s.group_accuracy[0], s.group_accuracy[1]);
  EXPECT_EQ(s.group_loss[0], s.group_loss[1]);
}

TEST(Model, SnapshotRejectsEmptyGroup) {
  const auto m = MaskedMlp::init(MlpSpec{2, {3, 3}, 2}, 1);
  GroupedDataset data(2, std::vector<double>(8, 0.0), {0, 1, 0, 1}, {0, 0, 0, 0},
                      {"present", "missing"}, 2, /*allow_empty_groups=*/true);
  try {
    snapshot_baseline(m, data);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
}

TEST(ModelProperty, AccuracyMeanMatchesMetrics) {
  const auto m = MaskedMlp::init(MlpSpec{4, {8, 8}, 3}, 21);
  const auto data = testing::random_dataset(61, 4, 3, 3, 2);
  const auto correct = per_sample_accuracy(m.logits(data.feature_rows(0, data.size())),
                                           data.labels());
  double hits = 0;
  for (auto c : correct) hits += c;
  EXPECT_EQ(hits / static_cast<double>(data.size()), dataset_group_stats(m, data).accuracy);
}

TEST(Model, CheckpointRoundTrip) {
  auto m = MaskedMlp::init(MlpSpec{3, {7, 5}, 4}, 8);
  m.layers()[1].mask[3] = 0;
  m.layers()[1].mask[17] = 0;
  m.apply_masks();
  m.layers()[2].bias.mutable_values()[1] = -0.125;
  const auto dir = testing::temp_dir("ckpt");
  const auto path = (dir / "m.ckpt").string();
  save_checkpoint(m, path);
  const auto back = load_checkpoint(path);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.spec(), m.spec());
  EXPECT_TRUE(load_checkpoint(path, m.spec()) == m);
  EXPECT_THROW(load_checkpoint(path, MlpSpec{3, {7, 6}, 4}), ConfigError);

  // trailing garbage and truncation
  { std::ofstream(path, std::ios::app | std::ios::binary) << 'x'; }
  EXPECT_THROW(load_checkpoint(path), FormatError);
  { std::ofstream(path, std::ios::binary) << "FSMLPCKP"; }
  EXPECT_THROW(load_checkpoint(path), FormatError);
  { std::ofstream(path, std::ios::binary) << "not a checkpoint at all"; }
  EXPECT_THROW(load_checkpoint(path), FormatError);
  EXPECT_THROW(load_checkpoint((dir / "absent.ckpt").string()), IoError);
}

}  // namespace
}  // namespace fairsparse
