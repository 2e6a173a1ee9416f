#include "fairsparse/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairsparse/errors.hpp"

namespace fairsparse {

void GmpSchedule::validate() const {
  if (!(initial_sparsity >= 0.0 && initial_sparsity < 1.0)) {
    throw ConfigError("gmp: initial sparsity must lie in [0, 1)");
  }
  if (!(final_sparsity > 0.0 && final_sparsity < 1.0)) {
    throw ConfigError("gmp: final sparsity must lie in (0, 1)");
  }
  if (final_sparsity < initial_sparsity) {
    throw ConfigError("gmp: final sparsity below initial sparsity");
  }
  if (start_epoch < 0 || end_epoch < start_epoch) {
    throw ConfigError("gmp: need 0 <= start_epoch <= end_epoch");
  }
  if (frequency < 1) throw ConfigError("gmp: frequency must be >= 1");
  if ((end_epoch - start_epoch) % frequency != 0) {
    throw ConfigError("gmp: end_epoch - start_epoch must be a multiple of frequency so the final "
                      "sparsity is reached");
  }
}

bool GmpSchedule::is_pruning_epoch(int epoch) const {
  return epoch >= start_epoch && epoch <= end_epoch && (epoch - start_epoch) % frequency == 0;
}

double sparsity_at_epoch(const GmpSchedule& schedule, int epoch) {
  if (!schedule.is_pruning_epoch(epoch)) {
    throw RangeError("gmp: epoch " + std::to_string(epoch) + " is not a pruning epoch of [" +
                     std::to_string(schedule.start_epoch) + ", " +
                     std::to_string(schedule.end_epoch) + "] every " +
                     std::to_string(schedule.frequency));
  }
  if (schedule.end_epoch == schedule.start_epoch) return schedule.final_sparsity;
  if (epoch == schedule.start_epoch) return schedule.initial_sparsity;
  const double progress = static_cast<double>(epoch - schedule.start_epoch) /
                          static_cast<double>(schedule.end_epoch - schedule.start_epoch);
  const double remaining = 1.0 - progress;
  return schedule.final_sparsity +
         (schedule.initial_sparsity - schedule.final_sparsity) * remaining * remaining * remaining;
}

std::size_t pruned_count(double target, std::size_t numel) {
  return static_cast<std::size_t>(std::round(target * static_cast<double>(numel)));
}

void magnitude_prune_layer(std::span<const double> weights, Mask& mask, double target) {
  if (weights.size() != mask.size()) {
    throw DimensionError("prune: " + std::to_string(weights.size()) + " weights vs " +
                         std::to_string(mask.size()) + " mask entries");
  }
  if (!(target >= 0.0 && target <= 1.0)) {
    throw RangeError("prune: target sparsity " + std::to_string(target) + " outside [0, 1]");
  }
  const std::size_t already = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 0));
  const std::size_t count = pruned_count(target, mask.size());
  if (count < already) {
    throw MonotonicityError("prune: target sparsity " + std::to_string(target) + " would keep " +
                            std::to_string(mask.size() - count) + " weights but only " +
                            std::to_string(mask.size() - already) + " survive");
  }
  std::vector<std::size_t> order(mask.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    return std::pair<int, double>{mask[i] ? 1 : 0, mask[i] ? std::fabs(weights[i]) : 0.0};
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  for (std::size_t r = 0; r < count; ++r) mask[order[r]] = 0;
}

void apply_gmp_step(MaskedMlp& model, const GmpSchedule& schedule, int epoch) {
  schedule.validate();
  const double target = sparsity_at_epoch(schedule, epoch);
  for (const auto& ref : prunable_layers(model)) {
    magnitude_prune_layer(ref.layer->weight.values(), ref.layer->mask, target);
  }
  model.apply_masks();
}

}  // namespace fairsparse
