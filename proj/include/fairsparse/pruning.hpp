#pragma once

#include <span>

#include "fairsparse/model.hpp"

namespace fairsparse {

// Cubic gradual-magnitude-pruning schedule over epochs
// start_epoch, start_epoch + frequency, ..., <= end_epoch.
struct GmpSchedule {
  double initial_sparsity = 0.0;
  double final_sparsity = 0.9;
  int start_epoch = 0;
  int end_epoch = 14;
  int frequency = 1;

  void validate() const;
  bool is_pruning_epoch(int epoch) const;
};

// s_f + (s_i - s_f) * (1 - (t - t0) / (T_end - t0))^3, or s_f when T_end == t0.
// Throws RangeError off the pruning grid.
double sparsity_at_epoch(const GmpSchedule& schedule, int epoch);

// Number of entries to prune for `target` of `numel` (round half away from zero).
std::size_t pruned_count(double target, std::size_t numel);

// Masks the round(target * numel) smallest |W * M| entries. Already-masked
// entries go first, magnitude ties break toward the lowest flat index.
// Throws MonotonicityError if that would unmask anything.
void magnitude_prune_layer(std::span<const double> weights, Mask& mask, double target);

// Prunes every prunable layer to sparsity_at_epoch(schedule, epoch) and
// hard-zeroes the removed weights.
void apply_gmp_step(MaskedMlp& model, const GmpSchedule& schedule, int epoch);

}  // namespace fairsparse
