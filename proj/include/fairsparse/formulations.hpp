#pragma once

// Constrained fine-tuning formulations. Each one defines how many multipliers
// it carries, how they are projected, the (non-differentiable) constraint
// values the dual player ascends on, and the differentiable surrogate the
// primal player descends on.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fairsparse/autodiff.hpp"
#include "fairsparse/model.hpp"
#include "fairsparse/replay_buffer.hpp"

namespace fairsparse {

enum class FormulationKind { kNft, kCeag, kEl, kCelg, kPw, kTwoSided };

struct Formulation {
  FormulationKind kind = FormulationKind::kNft;
  double epsilon = 0.0;

  // Names: nft, ceag, el, celg, pw, two_sided.
  static Formulation from_name(const std::string& name, double epsilon = 0.0);
  std::string name() const;
  bool has_tolerance() const;
  // Accuracy for CEAG / PW / two-sided, loss for EL / CELG.
  ObservationKind observation_kind() const;
};

std::size_t dual_dim(const Formulation& f, std::size_t num_groups);

// Constraint values for the dual step, plus the per-group estimate they were
// built from (psi-hat for accuracy formulations, loss gaps for EL / CELG).
struct ViolationVector {
  std::vector<double> values;
  std::vector<double> group_estimate;
  // PW only: most / least degraded groups among the available ones, -1 if none.
  int pw_max_group = -1;
  int pw_min_group = -1;
};

// Per-group means over the groups present in a batch; aggregate is the plain
// batch mean.
GroupEstimates batch_estimates(std::span<const double> values,
                               const std::vector<std::vector<std::size_t>>& members);

ViolationVector violations(const Formulation& f, const GroupEstimates& estimates,
                           const BaselineSnapshot& baseline);

// Inequality multipliers are clipped at 0; EL multipliers pass through.
std::vector<double> project_duals(const Formulation& f, std::vector<double> lambda);

// Effective multiplier on each group's loss gap (L_g - L). Two-sided folds
// its pair into lambda+ - lambda-, PW puts +lambda / -lambda on its extremal
// groups.
std::vector<double> group_multipliers(const Formulation& f, std::span<const double> lambda,
                                      const ViolationVector& violation, std::size_t num_groups);

// Per-sample weights w such that sum_i w_i * loss_i has the gradient of
// L(batch) + sum_g mu_g (L_g(batch) - L(batch)), i.e.
// w_i = (1 - sum_{g in batch} mu_g) / B + mu_{g(i)} / B_{g(i)}.
std::vector<double> primal_sample_weights(const Formulation& f, std::span<const double> lambda,
                                          const ViolationVector& violation,
                                          const std::vector<std::vector<std::size_t>>& members,
                                          std::size_t batch_size);

// The penalty sum_j lambda_j * psi~_j(batch) on its own, dense-model constants
// included (they carry no gradient). Zero for NFT.
Var surrogate_penalty(Tape& tape, const Formulation& f, Var per_sample_losses,
                      const std::vector<std::vector<std::size_t>>& members,
                      std::span<const double> lambda, const ViolationVector& violation,
                      const BaselineSnapshot& baseline);

}  // namespace fairsparse
