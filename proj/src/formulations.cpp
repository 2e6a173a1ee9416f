#include "fairsparse/formulations.hpp"

#include <algorithm>

#include "fairsparse/errors.hpp"

namespace fairsparse {

Formulation Formulation::from_name(const std::string& name, double epsilon) {
  Formulation f;
  if (name == "nft") {
    f.kind = FormulationKind::kNft;
  } else if (name == "ceag") {
    f.kind = FormulationKind::kCeag;
  } else if (name == "el") {
    f.kind = FormulationKind::kEl;
  } else if (name == "celg") {
    f.kind = FormulationKind::kCelg;
  } else if (name == "pw") {
    f.kind = FormulationKind::kPw;
  } else if (name == "two_sided") {
    f.kind = FormulationKind::kTwoSided;
  } else {
    throw ConfigError("unknown formulation '" + name +
                      "' (expected nft, ceag, el, celg, pw or two_sided)");
  }
  if (f.has_tolerance()) {
    if (!(epsilon >= 0.0)) throw ConfigError("formulation: epsilon must be >= 0");
    f.epsilon = epsilon;
  }
  return f;
}

std::string Formulation::name() const {
  switch (kind) {
    case FormulationKind::kNft: return "nft";
    case FormulationKind::kCeag: return "ceag";
    case FormulationKind::kEl: return "el";
    case FormulationKind::kCelg: return "celg";
    case FormulationKind::kPw: return "pw";
    case FormulationKind::kTwoSided: return "two_sided";
  }
  return "?";
}

bool Formulation::has_tolerance() const {
  return kind != FormulationKind::kNft && kind != FormulationKind::kEl;
}

ObservationKind Formulation::observation_kind() const {
  return kind == FormulationKind::kEl || kind == FormulationKind::kCelg ? ObservationKind::kLoss
                                                                         : ObservationKind::kAccuracy;
}

std::size_t dual_dim(const Formulation& f, std::size_t num_groups) {
  switch (f.kind) {
    case FormulationKind::kNft: return 0;
    case FormulationKind::kPw: return 1;
    case FormulationKind::kTwoSided: return 2 * num_groups;
    default: return num_groups;
  }
}

GroupEstimates batch_estimates(std::span<const double> values,
                               const std::vector<std::vector<std::size_t>>& members) {
  GroupEstimates est;
  est.value.assign(members.size(), 0.0);
  est.available.assign(members.size(), false);
  for (std::size_t g = 0; g < members.size(); ++g) {
    if (members[g].empty()) continue;
    double s = 0.0;
    for (std::size_t pos : members[g]) s += values[pos];
    est.value[g] = s / static_cast<double>(members[g].size());
    est.available[g] = true;
  }
  double total = 0.0;
  for (double v : values) total += v;
  est.aggregate = values.empty() ? 0.0 : total / static_cast<double>(values.size());
  return est;
}

ViolationVector violations(const Formulation& f, const GroupEstimates& estimates,
                           const BaselineSnapshot& baseline) {
  const std::size_t num_groups = estimates.value.size();
  if (baseline.group_accuracy.size() != num_groups || baseline.group_loss.size() != num_groups) {
    throw StateError("violations: baseline snapshot missing or built for a different group set");
  }
  ViolationVector out;
  const double eps = f.epsilon;
  switch (f.kind) {
    case FormulationKind::kNft:
      out.group_estimate.assign(num_groups, 0.0);
      break;
    case FormulationKind::kCeag:
    case FormulationKind::kTwoSided: {
      out.group_estimate = excess_gaps(estimates, baseline.group_accuracy, baseline.accuracy,
                                       ObservationKind::kAccuracy);
      for (double psi : out.group_estimate) out.values.push_back(psi - eps);
      if (f.kind == FormulationKind::kTwoSided) {
        for (double psi : out.group_estimate) out.values.push_back(-psi - eps);
      }
      break;
    }
    case FormulationKind::kCelg: {
      out.group_estimate =
          excess_gaps(estimates, baseline.group_loss, baseline.loss, ObservationKind::kLoss);
      for (double psi : out.group_estimate) out.values.push_back(psi - eps);
      break;
    }
    case FormulationKind::kEl: {
      out.group_estimate.assign(num_groups, 0.0);
      for (std::size_t g = 0; g < num_groups; ++g) {
        if (estimates.available[g]) out.group_estimate[g] = estimates.value[g] - estimates.aggregate;
      }
      out.values = out.group_estimate;
      break;
    }
    case FormulationKind::kPw: {
      // Accuracy gaps Delta_g of the available groups; spread of the extremes.
      out.group_estimate.assign(num_groups, 0.0);
      double hi = 0.0, lo = 0.0;
      for (std::size_t g = 0; g < num_groups; ++g) {
        if (!estimates.available[g]) continue;
        const double gap = baseline.group_accuracy[g] - estimates.value[g];
        out.group_estimate[g] = gap;
        if (out.pw_max_group < 0 || gap > hi) {
          hi = gap;
          out.pw_max_group = static_cast<int>(g);
        }
        if (out.pw_min_group < 0 || gap < lo) {
          lo = gap;
          out.pw_min_group = static_cast<int>(g);
        }
      }
      out.values.push_back((hi - lo) - eps);
      break;
    }
  }
  return out;
}

std::vector<double> project_duals(const Formulation& f, std::vector<double> lambda) {
  if (f.kind == FormulationKind::kEl) return lambda;
  for (double& l : lambda) l = std::max(l, 0.0);
  return lambda;
}

std::vector<double> group_multipliers(const Formulation& f, std::span<const double> lambda,
                                      const ViolationVector& violation, std::size_t num_groups) {
  if (lambda.size() != dual_dim(f, num_groups)) {
    throw DimensionError("multipliers: got " + std::to_string(lambda.size()) + ", formulation " +
                         f.name() + " needs " + std::to_string(dual_dim(f, num_groups)));
  }
  std::vector<double> mu(num_groups, 0.0);
  switch (f.kind) {
    case FormulationKind::kNft:
      break;
    case FormulationKind::kCeag:
    case FormulationKind::kEl:
    case FormulationKind::kCelg:
      std::copy(lambda.begin(), lambda.end(), mu.begin());
      break;
    case FormulationKind::kTwoSided:
      for (std::size_t g = 0; g < num_groups; ++g) mu[g] = lambda[g] - lambda[num_groups + g];
      break;
    case FormulationKind::kPw:
      if (violation.pw_max_group >= 0 && violation.pw_min_group >= 0) {
        mu[static_cast<std::size_t>(violation.pw_max_group)] += lambda[0];
        mu[static_cast<std::size_t>(violation.pw_min_group)] -= lambda[0];
      }
      break;
  }
  return mu;
}

namespace {

void check_members(const std::vector<std::vector<std::size_t>>& members, std::size_t batch_size) {
  std::size_t total = 0;
  for (const auto& m : members) {
    total += m.size();
    for (std::size_t pos : m) {
      if (pos >= batch_size) throw IndexError("batch member position out of range");
    }
  }
  if (total != batch_size) {
    throw DimensionError("group membership lists cover " + std::to_string(total) + " of " +
                         std::to_string(batch_size) + " samples");
  }
}

// Returns mu_g / B_g per sample and the batch-level sum over present groups.
std::pair<std::vector<double>, double> penalty_parts(
    std::span<const double> mu, const std::vector<std::vector<std::size_t>>& members,
    std::size_t batch_size) {
  std::vector<double> per_sample(batch_size, 0.0);
  double present_sum = 0.0;
  for (std::size_t g = 0; g < members.size(); ++g) {
    if (members[g].empty()) continue;
    present_sum += mu[g];
    const double w = mu[g] / static_cast<double>(members[g].size());
    for (std::size_t pos : members[g]) per_sample[pos] = w;
  }
  return {std::move(per_sample), present_sum};
}

}  // namespace

std::vector<double> primal_sample_weights(const Formulation& f, std::span<const double> lambda,
                                          const ViolationVector& violation,
                                          const std::vector<std::vector<std::size_t>>& members,
                                          std::size_t batch_size) {
  if (batch_size == 0) throw DimensionError("primal weights: empty batch");
  check_members(members, batch_size);
  const auto mu = group_multipliers(f, lambda, violation, members.size());
  auto [weights, present_sum] = penalty_parts(mu, members, batch_size);
  const double base = (1.0 - present_sum) / static_cast<double>(batch_size);
  for (double& w : weights) w = base + w;
  return weights;
}

Var surrogate_penalty(Tape& tape, const Formulation& f, Var per_sample_losses,
                      const std::vector<std::vector<std::size_t>>& members,
                      std::span<const double> lambda, const ViolationVector& violation,
                      const BaselineSnapshot& baseline) {
  const std::size_t batch_size = tape.value(per_sample_losses).numel();
  if (batch_size == 0) throw DimensionError("surrogate penalty: empty batch");
  check_members(members, batch_size);
  const auto mu = group_multipliers(f, lambda, violation, members.size());
  auto [weights, present_sum] = penalty_parts(mu, members, batch_size);
  const double mean_term = present_sum / static_cast<double>(batch_size);
  for (double& w : weights) w -= mean_term;

  double constant = 0.0;
  if (f.kind != FormulationKind::kEl && f.kind != FormulationKind::kNft) {
    if (baseline.group_loss.size() != members.size()) {
      throw StateError("surrogate penalty: baseline snapshot missing");
    }
    for (std::size_t g = 0; g < members.size(); ++g) {
      if (!members[g].empty()) constant -= mu[g] * (baseline.group_loss[g] - baseline.loss);
    }
  }
  return add_scalar(tape, weighted_sum(tape, per_sample_losses, weights), constant);
}

}  // namespace fairsparse
