#include "fairsparse/replay_buffer.hpp"

#include "fairsparse/errors.hpp"

namespace fairsparse {

std::string to_string(ObservationKind kind) {
  return kind == ObservationKind::kAccuracy ? "accuracy" : "loss";
}

ObservationKind observation_kind_from_string(const std::string& s) {
  if (s == "accuracy") return ObservationKind::kAccuracy;
  if (s == "loss") return ObservationKind::kLoss;
  throw ParseError("unknown observation kind '" + s + "'");
}

GroupBuffer::GroupBuffer(std::size_t capacity, ObservationKind kind)
    : data_(capacity, 0.0), kind_(kind) {
  if (capacity == 0) throw ConfigError("replay buffer: capacity must be positive");
}

void GroupBuffer::push(double value) {
  if (kind_ == ObservationKind::kAccuracy && value != 0.0 && value != 1.0) {
    throw RangeError("replay buffer: accuracy observations must be 0 or 1, got " +
                     std::to_string(value));
  }
  if (full()) {
    data_[head_] = value;
    head_ = (head_ + 1) % data_.size();
  } else {
    data_[(head_ + size_) % data_.size()] = value;
    ++size_;
  }
}

std::vector<double> GroupBuffer::entries() const {
  std::vector<double> out;
  out.reserve(size_);
  for (std::size_t i = 0; i < size_; ++i) out.push_back(data_[(head_ + i) % data_.size()]);
  return out;
}

double GroupBuffer::mean() const {
  if (size_ == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < size_; ++i) s += data_[(head_ + i) % data_.size()];
  return s / static_cast<double>(size_);
}

BufferSet::BufferSet(std::size_t num_groups, std::size_t capacity, ObservationKind kind)
    : buffers_(num_groups, GroupBuffer(capacity, kind)), capacity_(capacity), kind_(kind) {}

bool BufferSet::operator==(const BufferSet& other) const {
  if (capacity_ != other.capacity_ || kind_ != other.kind_ ||
      buffers_.size() != other.buffers_.size()) {
    return false;
  }
  for (std::size_t g = 0; g < buffers_.size(); ++g) {
    if (buffers_[g].entries() != other.buffers_[g].entries()) return false;
  }
  return true;
}

void buffer_push(BufferSet& buffers, std::span<const double> values, std::span<const int> groups) {
  if (values.size() != groups.size()) {
    throw DimensionError("buffer_push: " + std::to_string(values.size()) + " values for " +
                         std::to_string(groups.size()) + " group ids");
  }
  for (int g : groups) {
    if (g < 0 || static_cast<std::size_t>(g) >= buffers.num_groups()) {
      throw IndexError("buffer_push: unknown group id " + std::to_string(g));
    }
  }
  if (buffers.kind() == ObservationKind::kAccuracy) {
    for (double v : values) {
      if (v != 0.0 && v != 1.0) {
        throw RangeError("buffer_push: accuracy observations must be 0 or 1");
      }
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    buffers.group(static_cast<std::size_t>(groups[i])).push(values[i]);
  }
}

GroupEstimates buffers_query_group_means(const BufferSet& buffers) {
  GroupEstimates est;
  est.value.assign(buffers.num_groups(), 0.0);
  est.available.assign(buffers.num_groups(), false);
  double sum = 0.0;
  std::size_t full = 0;
  for (std::size_t g = 0; g < buffers.num_groups(); ++g) {
    const GroupBuffer& buf = buffers.group(g);
    if (!buf.full()) continue;
    est.value[g] = buf.mean();
    est.available[g] = true;
    sum += est.value[g];
    ++full;
  }
  est.aggregate = full ? sum / static_cast<double>(full) : 0.0;
  return est;
}

std::vector<double> excess_gaps(const GroupEstimates& estimates,
                                std::span<const double> dense_group, double dense_aggregate,
                                ObservationKind kind) {
  if (dense_group.size() != estimates.value.size()) {
    throw DimensionError("excess gaps: baseline has " + std::to_string(dense_group.size()) +
                         " groups, estimates have " + std::to_string(estimates.value.size()));
  }
  std::vector<double> psi(estimates.value.size(), 0.0);
  for (std::size_t g = 0; g < psi.size(); ++g) {
    if (!estimates.available[g]) continue;
    if (kind == ObservationKind::kAccuracy) {
      psi[g] = (dense_group[g] - estimates.value[g]) - (dense_aggregate - estimates.aggregate);
    } else {
      psi[g] = (estimates.value[g] - dense_group[g]) - (estimates.aggregate - dense_aggregate);
    }
  }
  return psi;
}

std::vector<double> buffers_query_eag(const BufferSet& buffers, const BaselineSnapshot& baseline) {
  if (buffers.kind() != ObservationKind::kAccuracy) {
    throw StateError("buffers_query_eag: buffers hold losses, not accuracies");
  }
  return excess_gaps(buffers_query_group_means(buffers), baseline.group_accuracy,
                     baseline.accuracy, ObservationKind::kAccuracy);
}

}  // namespace fairsparse
