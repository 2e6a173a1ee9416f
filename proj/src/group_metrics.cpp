#include "fairsparse/group_metrics.hpp"

#include <algorithm>

#include "fairsparse/errors.hpp"

namespace fairsparse {

GroupStats group_stats_from_samples(std::span<const std::uint8_t> correct,
                                    std::span<const double> loss, std::span<const int> groups,
                                    std::size_t num_groups) {
  if (correct.size() != groups.size() || loss.size() != groups.size()) {
    throw DimensionError("group stats: per-sample arrays disagree in length");
  }
  GroupStats stats;
  stats.group_size.assign(num_groups, 0);
  std::vector<std::size_t> hits(num_groups, 0);
  std::vector<double> loss_sum(num_groups, 0.0);
  std::size_t total_hits = 0;
  double total_loss = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    if (g >= num_groups) throw IndexError("group stats: group id " + std::to_string(g));
    ++stats.group_size[g];
    hits[g] += correct[i];
    loss_sum[g] += loss[i];
    total_hits += correct[i];
    total_loss += loss[i];
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (stats.group_size[g] == 0) {
      throw ConfigError("group stats: group " + std::to_string(g) + " has no samples");
    }
    const auto n = static_cast<double>(stats.group_size[g]);
    stats.group_accuracy.push_back(static_cast<double>(hits[g]) / n);
    stats.group_loss.push_back(loss_sum[g] / n);
  }
  const auto n = static_cast<double>(groups.size());
  stats.accuracy = static_cast<double>(total_hits) / n;
  stats.loss = total_loss / n;
  return stats;
}

GroupStats dataset_group_stats(const MaskedMlp& model, const GroupedDataset& data) {
  const auto sizes = data.group_sizes();
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    if (sizes[g] == 0) {
      throw ConfigError("group stats: group '" + data.group_names()[g] + "' is empty");
    }
  }
  const Tensor logits = model.logits(data.feature_rows(0, data.size()));
  const auto correct = per_sample_accuracy(logits, data.labels());
  const auto loss = kernels::cross_entropy(logits, data.labels());
  return group_stats_from_samples(correct, loss, data.groups(), data.num_groups());
}

namespace {

DisparityReport gaps_from(double dense_acc, std::span<const double> dense_group, double sparse_acc,
                          std::span<const double> sparse_group) {
  if (dense_group.size() != sparse_group.size() || dense_group.empty()) {
    throw ConfigError("accuracy gaps: " + std::to_string(dense_group.size()) +
                      " dense groups vs " + std::to_string(sparse_group.size()) +
                      " sparse groups");
  }
  DisparityReport r;
  r.delta = dense_acc - sparse_acc;
  for (std::size_t g = 0; g < dense_group.size(); ++g) {
    r.group_delta.push_back(dense_group[g] - sparse_group[g]);
    r.psi.push_back(r.group_delta.back() - r.delta);
  }
  r.max_psi = *std::max_element(r.psi.begin(), r.psi.end());
  r.psi_pw = pairwise_disparity(r);
  return r;
}

}  // namespace

DisparityReport accuracy_gaps(const GroupStats& dense, const GroupStats& sparse) {
  if (dense.group_size != sparse.group_size) {
    throw ConfigError("accuracy gaps: dense and sparse statistics cover different groups");
  }
  return gaps_from(dense.accuracy, dense.group_accuracy, sparse.accuracy, sparse.group_accuracy);
}

DisparityReport accuracy_gaps(const BaselineSnapshot& dense, const GroupStats& sparse) {
  return gaps_from(dense.accuracy, dense.group_accuracy, sparse.accuracy, sparse.group_accuracy);
}

double pairwise_disparity(const DisparityReport& report) {
  if (report.psi.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(report.psi.begin(), report.psi.end());
  return *hi - *lo;
}

}  // namespace fairsparse
