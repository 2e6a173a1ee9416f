#include "fairsparse/replay_buffer.hpp"

#include <gtest/gtest.h>

#include <random>

#include "fairsparse/errors.hpp"

namespace fairsparse {
namespace {

BaselineSnapshot baseline(std::vector<double> group_acc, double acc) {
  BaselineSnapshot b;
  b.group_accuracy = std::move(group_acc);
  b.accuracy = acc;
  b.group_loss.assign(b.group_accuracy.size(), 0.0);
  return b;
}

TEST(ReplayBuffer, FifoEvictsOldest) {
  GroupBuffer b(2, ObservationKind::kLoss);
  b.push(1.0);
  b.push(2.0);
  b.push(3.0);
  EXPECT_EQ(b.entries(), (std::vector<double>{2.0, 3.0}));
  EXPECT_TRUE(b.full());
}

TEST(ReplayBuffer, AbsentGroupUnchanged) {
  BufferSet set(3, 4, ObservationKind::kAccuracy);
  const std::vector<double> v = {1, 0, 1};
  const std::vector<int> g = {0, 2, 0};
  buffer_push(set, v, g);
  EXPECT_EQ(set.group(1).size(), 0u);
  EXPECT_EQ(set.group(0).entries(), (std::vector<double>{1, 1}));
  EXPECT_EQ(set.group(2).entries(), (std::vector<double>{0}));
}

TEST(ReplayBuffer, PushValidation) {
  BufferSet set(2, 3, ObservationKind::kAccuracy);
  const std::vector<double> v = {1, 0};
  const std::vector<int> bad_group = {0, 2};
  EXPECT_THROW(buffer_push(set, v, bad_group), IndexError);
  const std::vector<double> not_binary = {1, 0.5};
  const std::vector<int> ok = {0, 1};
  EXPECT_THROW(buffer_push(set, not_binary, ok), RangeError);
  // a rejected batch leaves the buffers untouched
  EXPECT_EQ(set.group(0).size(), 0u);
  const std::vector<int> short_groups = {0};
  EXPECT_THROW(buffer_push(set, v, short_groups), DimensionError);
  EXPECT_THROW(BufferSet(2, 0, ObservationKind::kLoss), ConfigError);
}

TEST(ReplayBuffer, QueryEagAllNonFull) {
  BufferSet set(2, 3, ObservationKind::kAccuracy);
  const std::vector<double> v = {1, 1};
  const std::vector<int> g = {0, 1};
  buffer_push(set, v, g);
  for (double p : buffers_query_eag(set, baseline({0.9, 0.8}, 0.85))) EXPECT_EQ(p, 0.0);
}

// psi is oriented as (dense gap of the group) - (dense gap overall), so a
// group that lost more accuracy than average has psi > 0.
TEST(ReplayBuffer, QueryEagTwoFullBuffers) {
  BufferSet set(2, 2, ObservationKind::kAccuracy);
  const std::vector<double> v = {1, 1, 1, 0};
  const std::vector<int> g = {0, 0, 1, 1};
  buffer_push(set, v, g);
  const auto psi = buffers_query_eag(set, baseline({0.9, 0.8}, 0.85));
  // A_s = (1.0 + 0.5) / 2 = 0.75; (0.9 - 1.0) - (0.85 - 0.75), (0.8 - 0.5) - (0.85 - 0.75)
  EXPECT_NEAR(psi[0], -0.2, 1e-15);
  EXPECT_NEAR(psi[1], 0.2, 1e-15);
}

TEST(ReplayBuffer, QueryEagOneFullBuffer) {
  BufferSet set(2, 2, ObservationKind::kAccuracy);
  const std::vector<double> v = {1, 1, 0};
  const std::vector<int> g = {0, 0, 1};
  buffer_push(set, v, g);
  const auto psi = buffers_query_eag(set, baseline({0.9, 0.8}, 0.85));
  // A_s = 1.0 from the single full buffer: (0.9 - 1.0) - (0.85 - 1.0)
  EXPECT_NEAR(psi[0], 0.05, 1e-15);
  EXPECT_EQ(psi[1], 0.0);
}

TEST(ReplayBuffer, GroupMeans) {
  BufferSet set(2, 2, ObservationKind::kLoss);
  const std::vector<double> v = {1.0, 3.0, 0.5};
  const std::vector<int> g = {0, 0, 1};
  buffer_push(set, v, g);
  const auto est = buffers_query_group_means(set);
  EXPECT_EQ(est.value[0], 2.0);
  EXPECT_TRUE(est.available[0]);
  EXPECT_FALSE(est.available[1]);
  EXPECT_EQ(est.aggregate, 2.0);

  BufferSet empty(3, 2, ObservationKind::kLoss);
  const auto none = buffers_query_group_means(empty);
  for (bool a : none.available) EXPECT_FALSE(a);
  EXPECT_THROW(buffers_query_eag(set, baseline({0, 0}, 0)), StateError);
}

TEST(ReplayBufferProperty, SingleGroupCapacityOneHasNoExcessGap) {
  std::mt19937_64 rng(4);
  BufferSet set(1, 1, ObservationKind::kAccuracy);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> v = {static_cast<double>(rng() % 2)};
    const std::vector<int> g = {0};
    buffer_push(set, v, g);
    EXPECT_EQ(buffers_query_eag(set, baseline({0.7}, 0.7))[0], 0.0);
  }
}

// Recomputes the estimator from the literal last-k suffix of each group's stream.
std::vector<double> brute_force_eag(const std::vector<std::vector<double>>& streams,
                                    std::size_t k, const BaselineSnapshot& b) {
  std::vector<double> means(streams.size(), 0.0);
  std::vector<bool> full(streams.size(), false);
  double sum = 0.0;
  std::size_t n_full = 0;
  for (std::size_t g = 0; g < streams.size(); ++g) {
    if (streams[g].size() < k) continue;
    double s = 0.0;
    for (std::size_t i = streams[g].size() - k; i < streams[g].size(); ++i) s += streams[g][i];
    means[g] = s / static_cast<double>(k);
    full[g] = true;
    sum += means[g];
    ++n_full;
  }
  const double agg = n_full ? sum / static_cast<double>(n_full) : 0.0;
  std::vector<double> psi(streams.size(), 0.0);
  for (std::size_t g = 0; g < streams.size(); ++g) {
    if (full[g]) psi[g] = (b.group_accuracy[g] - means[g]) - (b.accuracy - agg);
  }
  return psi;
}

TEST(ReplayBufferProperty, MatchesStreamReplay) {
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t groups = 1 + rng() % 8, k = 1 + rng() % 16;
    BufferSet set(groups, k, ObservationKind::kAccuracy);
    std::vector<std::vector<double>> streams(groups);
    std::vector<double> dense(groups);
    for (double& d : dense) d = static_cast<double>(rng() % 1000) / 1000.0;
    const auto b = baseline(dense, static_cast<double>(rng() % 1000) / 1000.0);
    const int pushes = 1 + static_cast<int>(rng() % 12);
    for (int p = 0; p < pushes; ++p) {
      const std::size_t batch = rng() % 20;
      std::vector<double> v(batch);
      std::vector<int> g(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        g[i] = static_cast<int>(rng() % groups);
        v[i] = static_cast<double>(rng() % 2);
        streams[static_cast<std::size_t>(g[i])].push_back(v[i]);
      }
      buffer_push(set, v, g);
      const auto got = buffers_query_eag(set, b);
      const auto want = brute_force_eag(streams, k, b);
      for (std::size_t j = 0; j < groups; ++j) EXPECT_EQ(got[j], want[j]);
      for (std::size_t j = 0; j < groups; ++j) {
        const auto& s = streams[j];
        const std::size_t keep = std::min(k, s.size());
        EXPECT_EQ(set.group(j).entries(), std::vector<double>(s.end() - static_cast<long>(keep), s.end()));
      }
    }
  }
}

}  // namespace
}  // namespace fairsparse
