#pragma once

#include <cstddef>
#include <vector>

#include "fairsparse/data.hpp"
#include "fairsparse/model.hpp"

namespace fairsparse {

struct GroupStats {
  std::vector<double> group_accuracy;
  std::vector<double> group_loss;
  std::vector<std::size_t> group_size;
  double accuracy = 0.0;
  double loss = 0.0;

  std::size_t num_groups() const { return group_size.size(); }
  bool operator==(const GroupStats&) const = default;
};

// Accuracy gaps and excess accuracy gaps between a dense and a sparse model.
// Positive gaps mean the sparse model is worse.
struct DisparityReport {
  double delta = 0.0;               // A_dense - A_sparse
  std::vector<double> group_delta;  // per group
  std::vector<double> psi;          // group_delta - delta
  double max_psi = 0.0;
  double psi_pw = 0.0;              // max psi - min psi
};

// Exact single pass over the dataset.
GroupStats dataset_group_stats(const MaskedMlp& model, const GroupedDataset& data);
// Same, from per-sample results already computed.
GroupStats group_stats_from_samples(std::span<const std::uint8_t> correct,
                                    std::span<const double> loss, std::span<const int> groups,
                                    std::size_t num_groups);

DisparityReport accuracy_gaps(const GroupStats& dense, const GroupStats& sparse);
DisparityReport accuracy_gaps(const BaselineSnapshot& dense, const GroupStats& sparse);
double pairwise_disparity(const DisparityReport& report);

}  // namespace fairsparse
