#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fairsparse/model.hpp"

namespace fairsparse {

enum class ObservationKind { kAccuracy, kLoss };

std::string to_string(ObservationKind kind);
ObservationKind observation_kind_from_string(const std::string& s);

// Fixed-capacity FIFO of one group's most recent per-sample observations.
class GroupBuffer {
 public:
  GroupBuffer(std::size_t capacity, ObservationKind kind);

  void push(double value);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return data_.size(); }
  bool full() const { return size_ == data_.size(); }
  ObservationKind kind() const { return kind_; }
  // Oldest first.
  std::vector<double> entries() const;
  // Sum taken in arrival order, divided by size(). 0 when empty.
  double mean() const;

 private:
  std::vector<double> data_;
  std::size_t head_ = 0;  // slot of the oldest entry
  std::size_t size_ = 0;
  ObservationKind kind_;
};

// One buffer per group, all with the same capacity and observation kind.
class BufferSet {
 public:
  BufferSet(std::size_t num_groups, std::size_t capacity, ObservationKind kind);

  std::size_t num_groups() const { return buffers_.size(); }
  std::size_t capacity() const { return capacity_; }
  ObservationKind kind() const { return kind_; }
  const GroupBuffer& group(std::size_t g) const { return buffers_.at(g); }
  GroupBuffer& group(std::size_t g) { return buffers_.at(g); }

  bool operator==(const BufferSet& other) const;

 private:
  std::vector<GroupBuffer> buffers_;
  std::size_t capacity_;
  ObservationKind kind_;
};

// Per-group estimate of a sparse-model quantity plus which groups carry one.
struct GroupEstimates {
  std::vector<double> value;   // meaningful only where available
  std::vector<bool> available;
  double aggregate = 0.0;
};

// Appends values[i] to the buffer of groups[i], in batch order.
void buffer_push(BufferSet& buffers, std::span<const double> values, std::span<const int> groups);

// Means of full buffers; aggregate is the unweighted mean over full buffers.
GroupEstimates buffers_query_group_means(const BufferSet& buffers);

// Excess gaps oriented so that positive means "degraded more than overall":
//   accuracy: psi_g = (dense_g - value_g) - (dense - aggregate)
//   loss:     psi_g = (value_g - dense_g) - (aggregate - dense)
// Unavailable groups get 0.
std::vector<double> excess_gaps(const GroupEstimates& estimates,
                                std::span<const double> dense_group, double dense_aggregate,
                                ObservationKind kind);

// Excess accuracy gaps from full accuracy buffers; non-full groups get 0 and
// the aggregate is the unweighted mean over full buffers.
std::vector<double> buffers_query_eag(const BufferSet& buffers, const BaselineSnapshot& baseline);

}  // namespace fairsparse
