#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairsparse/data.hpp"
#include "fairsparse/formulations.hpp"
#include "fairsparse/group_metrics.hpp"
#include "fairsparse/model.hpp"
#include "fairsparse/pruning.hpp"
#include "fairsparse/replay_buffer.hpp"

namespace fairsparse {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  bool nesterov = false;
  double weight_decay = 1e-4;

  void validate() const;
};

// Multi-step decay: base * gamma^(number of milestones reached), where a
// milestone at fraction f of `total_epochs` is reached at epoch floor(f * total).
struct LrSchedule {
  double base_lr = 0.01;
  std::vector<double> milestones = {0.6, 0.8, 0.9};
  double gamma = 0.1;

  void validate() const;
};

double lr_at_epoch(const LrSchedule& schedule, int epoch, int total_epochs);

// Momentum buffers, created on the first step.
struct SgdState {
  std::vector<std::vector<double>> weight_momentum;
  std::vector<std::vector<double>> bias_momentum;

  bool operator==(const SgdState&) const = default;
};

// One SGD step on a flat parameter block. Weight decay is added to the raw
// gradient; entries with mask == 0 are zeroed after the update.
void sgd_update(std::span<double> params, std::span<const double> grads,
                std::vector<double>& momentum, const SgdConfig& cfg, double lr,
                const Mask* mask = nullptr);
void sgd_step(MaskedMlp& model, const ModelGradients& grads, SgdState& state,
              const SgdConfig& cfg, double lr);

struct DualConfig {
  double lr = 0.01;
};

struct DualState {
  std::vector<double> lambda;

  bool operator==(const DualState&) const = default;
};

// lambda <- project(lambda + lr * c).
void dual_ascent_step(DualState& dual, const ViolationVector& violations, const DualConfig& cfg,
                      const Formulation& f);

struct TrainConfig {
  Formulation formulation;
  SgdConfig sgd;
  LrSchedule lr_schedule;
  DualConfig dual;
  bool use_buffers = true;
  std::size_t buffer_size = 40;
  std::size_t batch_size = 128;
  int total_epochs = 60;
  std::optional<GmpSchedule> gmp;  // none: fine-tune / train without pruning
  bool eval_test_each_epoch = false;

  void validate() const;
};

struct TrainState {
  int epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t shuffle_seed = 0;
  SgdState sgd;
  DualState dual;
  std::optional<BufferSet> buffers;
  std::optional<BaselineSnapshot> baseline;
  std::optional<GroupStats> test_baseline;
  std::uint64_t forward_passes = 0;
  std::uint64_t backward_passes = 0;

  bool operator==(const TrainState&) const = default;
};

std::string serialize_train_state(const TrainState& state);
TrainState deserialize_train_state(const std::string& text);

enum class StepEvent {
  kForward,
  kBufferPush,
  kViolations,
  kDualUpdate,
  kSurrogate,
  kBackward,
  kPrimalUpdate,
};

// Called after each phase of a step; `lambda` is the multiplier vector at that
// point (for kSurrogate: the one the primal objective is built with).
using StepObserver = std::function<void(StepEvent, std::span<const double> lambda)>;

struct StepMetrics {
  double batch_loss = 0.0;
  double objective = 0.0;
  std::vector<double> lambda;
  std::vector<double> group_estimate;
  std::vector<double> violations;
};

// One iteration: forward, buffer update, constraint estimate, dual ascent,
// primal descent on loss + surrogate with the updated multipliers. Exactly one
// forward and one backward pass.
StepMetrics altgda_step(MaskedMlp& model, const GroupedBatch& batch, TrainState& state,
                        const TrainConfig& cfg, double lr, const StepObserver& observer = {});

// Plain ERM minibatch step (mean cross-entropy).
double erm_step(MaskedMlp& model, const GroupedBatch& batch, SgdState& state,
                const SgdConfig& cfg, double lr);

struct EpochRecord {
  int epoch = 0;
  std::string split;  // "train" or "test"
  GroupStats stats;
  std::optional<DisparityReport> report;
  std::vector<double> lambda;
  double sparsity = 0.0;
  double lr = 0.0;
};

struct EpochResult {
  std::vector<EpochRecord> records;
  double train_seconds = 0.0;  // wall-clock of the optimization steps only
};

// Epoch-level driver. Pruning epochs apply a GMP step before training; every
// epoch ends with an exact train evaluation (and test evaluation when
// configured, always on the last epoch).
class Trainer {
 public:
  // Fresh run: snapshots the baseline from `model` before any step when the
  // formulation or the reports need it (always, when `with_baseline`).
  Trainer(MaskedMlp model, const GroupedDataset& train, const GroupedDataset* test,
          TrainConfig cfg, std::uint64_t shuffle_seed, bool with_baseline = true);
  // Resume from a serialized state.
  Trainer(MaskedMlp model, const GroupedDataset& train, const GroupedDataset* test,
          TrainConfig cfg, TrainState state);

  bool finished() const { return state_.epoch >= cfg_.total_epochs; }
  EpochResult run_epoch(const StepObserver& observer = {});

  const MaskedMlp& model() const { return model_; }
  MaskedMlp& model() { return model_; }
  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  EpochRecord evaluate(const GroupedDataset& data, const std::string& split, double lr) const;

  MaskedMlp model_;
  const GroupedDataset* train_;
  const GroupedDataset* test_;
  TrainConfig cfg_;
  TrainState state_;
};

struct TrainingResult {
  MaskedMlp model;
  std::vector<EpochRecord> records;
  std::vector<double> epoch_seconds;
  TrainState state;
};

TrainingResult run_training(MaskedMlp model, const GroupedDataset& train,
                            const GroupedDataset* test, const TrainConfig& cfg,
                            std::uint64_t shuffle_seed);

}  // namespace fairsparse
