#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fairsparse/autodiff.hpp"

namespace fairsparse {

// Features, labels and protected-group ids, one row per sample. Rows of X,
// labels and groups always move together.
class GroupedDataset {
 public:
  GroupedDataset() = default;
  // Validates labels < num_classes, groups < group_names.size(), and that every
  // group occurs at least once unless `allow_empty_groups`.
  GroupedDataset(std::size_t feature_dim, std::vector<double> features, std::vector<int> labels,
                 std::vector<int> groups, std::vector<std::string> group_names,
                 std::size_t num_classes, bool allow_empty_groups = false);

  std::size_t size() const { return labels_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_groups() const { return group_names_.size(); }

  const std::vector<double>& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<int>& groups() const { return groups_; }
  const std::vector<std::string>& group_names() const { return group_names_; }
  std::vector<std::size_t> group_sizes() const;

  // Rows [begin, end) as an (end-begin) x d matrix.
  Tensor feature_rows(std::size_t begin, std::size_t end) const;
  GroupedDataset subset(const std::vector<std::size_t>& indices, bool allow_empty_groups) const;

  bool operator==(const GroupedDataset&) const = default;

 private:
  std::size_t feature_dim_ = 0;
  std::vector<double> features_;
  std::vector<int> labels_;
  std::vector<int> groups_;
  std::vector<std::string> group_names_;
  std::size_t num_classes_ = 0;
};

struct SyntheticSpec {
  std::size_t feature_dim = 20;
  std::size_t num_classes = 5;
  std::vector<std::size_t> group_sizes = {4000, 2000, 1000, 500, 250};
  std::vector<double> noise_scales = {0.6, 0.7, 0.8, 0.9, 1.0};
  double test_fraction = 0.25;

  void validate() const;
};

struct TrainTestSplit {
  GroupedDataset train;
  GroupedDataset test;
};

// Class means uniform on the unit sphere, x = mu_y + sigma_g * N(0, I).
// Classes balanced within each group; stratified per (group, class) split.
TrainTestSplit synthetic_generate(const SyntheticSpec& spec, std::uint64_t seed);

// CSV with header `f0,...,f{d-1},label,group`. Group ids follow first
// appearance unless `known_groups` is given, in which case names must be
// drawn from it (ids are its indices).
GroupedDataset load_csv(const std::string& path,
                        const std::vector<std::string>* known_groups = nullptr);
void write_csv(const GroupedDataset& data, const std::string& path);

struct GroupedBatch {
  Tensor features;                                // B x d
  std::vector<int> labels;                        // B
  std::vector<int> groups;                        // B
  std::vector<std::size_t> indices;               // dataset row of each sample
  std::vector<std::vector<std::size_t>> members;  // per group: positions within the batch

  std::size_t size() const { return labels.size(); }
};

// Epoch permutation is a pure function of (base_seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t base_seed,
                                           std::uint64_t epoch);
GroupedBatch make_batch(const GroupedDataset& data, std::span<const std::size_t> indices);
std::vector<GroupedBatch> iterate_batches(const GroupedDataset& data, std::size_t batch_size,
                                          std::uint64_t base_seed, std::uint64_t epoch);

}  // namespace fairsparse
