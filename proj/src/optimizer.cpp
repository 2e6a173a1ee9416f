#include "fairsparse/optimizer.hpp"

#include <chrono>
#include <cmath>

#include "fairsparse/errors.hpp"
#include "json.hpp"

namespace fairsparse {

using nlohmann::json;

void SgdConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("sgd: learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("sgd: weight decay must be >= 0");
  }
}

void LrSchedule::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("lr: base must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("lr: gamma must lie in (0, 1]");
  for (double m : milestones) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("lr: milestones are fractions in [0, 1]");
  }
}

double lr_at_epoch(const LrSchedule& schedule, int epoch, int total_epochs) {
  double lr = schedule.base_lr;
  for (double fraction : schedule.milestones) {
    // The tiny offset keeps e.g. 0.29 * 100 from flooring to 28.
    const auto at = static_cast<int>(std::floor(fraction * total_epochs + 1e-9));
    if (at <= epoch) lr *= schedule.gamma;
  }
  return lr;
}

void sgd_update(std::span<double> params, std::span<const double> grads,
                std::vector<double>& momentum, const SgdConfig& cfg, double lr, const Mask* mask) {
  if (params.size() != grads.size() || (mask && mask->size() != params.size())) {
    throw DimensionError("sgd: " + std::to_string(params.size()) + " parameters vs " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (momentum.empty()) momentum.assign(params.size(), 0.0);
  if (momentum.size() != params.size()) throw DimensionError("sgd: momentum buffer shape");
  const double beta = cfg.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + cfg.weight_decay * params[i];
    momentum[i] = beta * momentum[i] + g;
    const double step = cfg.nesterov ? g + beta * momentum[i] : momentum[i];
    params[i] -= lr * step;
  }
  if (mask) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if ((*mask)[i] == 0) params[i] = 0.0;
  }
}

void sgd_step(MaskedMlp& model, const ModelGradients& grads, SgdState& state,
              const SgdConfig& cfg, double lr) {
  auto& layers = model.layers();
  if (grads.weights.size() != layers.size() || grads.biases.size() != layers.size()) {
    throw DimensionError("sgd: gradient layer count does not match the model");
  }
  state.weight_momentum.resize(layers.size());
  state.bias_momentum.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    sgd_update(layers[l].weight.mutable_values(), grads.weights[l], state.weight_momentum[l], cfg,
               lr, &layers[l].mask);
    sgd_update(layers[l].bias.mutable_values(), grads.biases[l], state.bias_momentum[l], cfg, lr);
  }
}

void dual_ascent_step(DualState& dual, const ViolationVector& violations, const DualConfig& cfg,
                      const Formulation& f) {
  if (dual.lambda.size() != violations.values.size()) {
    throw DimensionError("dual step: " + std::to_string(dual.lambda.size()) +
                         " multipliers vs " + std::to_string(violations.values.size()) +
                         " constraints");
  }
  for (std::size_t j = 0; j < dual.lambda.size(); ++j) {
    dual.lambda[j] += cfg.lr * violations.values[j];
  }
  dual.lambda = project_duals(f, std::move(dual.lambda));
  kernels::check_finite(dual.lambda, "dual step");
}

void TrainConfig::validate() const {
  sgd.validate();
  lr_schedule.validate();
  if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
  if (total_epochs < 1) throw ConfigError("train: total epochs must be >= 1");
  if (gmp) {
    gmp->validate();
    if (total_epochs <= gmp->end_epoch) {
      throw ConfigError("train: total epochs (" + std::to_string(total_epochs) +
                        ") must exceed the last pruning epoch (" +
                        std::to_string(gmp->end_epoch) + ")");
    }
  }
  if (formulation.kind != FormulationKind::kNft) {
    if (!(dual.lr > 0.0) || !std::isfinite(dual.lr)) {
      throw ConfigError("train: dual step size must be > 0");
    }
    if (use_buffers && buffer_size == 0) throw ConfigError("train: buffer size must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Steps

namespace {

void notify(const StepObserver& observer, StepEvent event, std::span<const double> lambda) {
  if (observer) observer(event, lambda);
}

}  // namespace

StepMetrics altgda_step(MaskedMlp& model, const GroupedBatch& batch, TrainState& state,
                        const TrainConfig& cfg, double lr, const StepObserver& observer) {
  if (batch.size() == 0) throw DimensionError("altgda_step: empty batch");
  const Formulation& f = cfg.formulation;
  const bool constrained = f.kind != FormulationKind::kNft;
  const std::size_t num_groups = batch.members.size();
  if (constrained && !state.baseline) {
    throw StateError("altgda_step: no baseline snapshot for a constrained formulation");
  }
  if (state.dual.lambda.size() != dual_dim(f, num_groups)) {
    throw DimensionError("altgda_step: dual state has " + std::to_string(state.dual.lambda.size()) +
                         " multipliers, formulation needs " +
                         std::to_string(dual_dim(f, num_groups)));
  }

  Tape tape;
  const Var x = tape.constant(batch.features);
  const TapedForward fwd = model.forward(tape, x);
  ++state.forward_passes;
  notify(observer, StepEvent::kForward, state.dual.lambda);

  const Var losses = cross_entropy_per_sample(tape, fwd.logits, batch.labels);
  const auto loss_values = tape.value(losses).values();

  StepMetrics metrics;
  ViolationVector violation;
  if (constrained) {
    std::vector<double> observations;
    if (f.observation_kind() == ObservationKind::kAccuracy) {
      const auto correct = per_sample_accuracy(tape.value(fwd.logits), batch.labels);
      observations.assign(correct.begin(), correct.end());
    } else {
      observations.assign(loss_values.begin(), loss_values.end());
    }
    GroupEstimates estimates;
    if (cfg.use_buffers) {
      if (!state.buffers) {
        throw StateError("altgda_step: replay buffers enabled but not initialized");
      }
      buffer_push(*state.buffers, observations, batch.groups);
      notify(observer, StepEvent::kBufferPush, state.dual.lambda);
      estimates = buffers_query_group_means(*state.buffers);
    } else {
      estimates = batch_estimates(observations, batch.members);
    }
    violation = violations(f, estimates, *state.baseline);
    notify(observer, StepEvent::kViolations, state.dual.lambda);
    dual_ascent_step(state.dual, violation, cfg.dual, f);
    notify(observer, StepEvent::kDualUpdate, state.dual.lambda);
    metrics.group_estimate = violation.group_estimate;
    metrics.violations = violation.values;
  }

  const auto weights =
      primal_sample_weights(f, state.dual.lambda, violation, batch.members, batch.size());
  const Var objective = weighted_sum(tape, losses, weights);
  notify(observer, StepEvent::kSurrogate, state.dual.lambda);

  tape.backward(objective);
  ++state.backward_passes;
  notify(observer, StepEvent::kBackward, state.dual.lambda);

  sgd_step(model, model.gradients(tape, fwd), state.sgd, cfg.sgd, lr);
  ++state.step;
  notify(observer, StepEvent::kPrimalUpdate, state.dual.lambda);

  double mean_loss = 0.0;
  for (double l : loss_values) mean_loss += l;
  metrics.batch_loss = mean_loss / static_cast<double>(loss_values.size());
  metrics.objective = tape.value(objective).item();
  metrics.lambda = state.dual.lambda;
  return metrics;
}

double erm_step(MaskedMlp& model, const GroupedBatch& batch, SgdState& state,
                const SgdConfig& cfg, double lr) {
  if (batch.size() == 0) throw DimensionError("erm_step: empty batch");
  Tape tape;
  const Var x = tape.constant(batch.features);
  const TapedForward fwd = model.forward(tape, x);
  const Var losses = cross_entropy_per_sample(tape, fwd.logits, batch.labels);
  const std::vector<double> weights(batch.size(), 1.0 / static_cast<double>(batch.size()));
  const Var mean = weighted_sum(tape, losses, weights);
  tape.backward(mean);
  sgd_step(model, model.gradients(tape, fwd), state, cfg, lr);
  return tape.value(mean).item();
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(MaskedMlp model, const GroupedDataset& train, const GroupedDataset* test,
                 TrainConfig cfg, std::uint64_t shuffle_seed, bool with_baseline)
    : model_(std::move(model)), train_(&train), test_(test), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.gmp) model_.spec().validate_for_pruning();
  state_.shuffle_seed = shuffle_seed;
  const std::size_t num_groups = train.num_groups();
  state_.dual.lambda.assign(dual_dim(cfg_.formulation, num_groups), 0.0);
  if (cfg_.formulation.kind != FormulationKind::kNft && !with_baseline) {
    throw ConfigError("train: constrained formulations need the dense baseline");
  }
  if (with_baseline) {
    state_.baseline = snapshot_baseline(model_, train);
    if (test_) state_.test_baseline = dataset_group_stats(model_, *test_);
  }
  if (cfg_.formulation.kind != FormulationKind::kNft && cfg_.use_buffers) {
    state_.buffers.emplace(num_groups, cfg_.buffer_size, cfg_.formulation.observation_kind());
  }
}

Trainer::Trainer(MaskedMlp model, const GroupedDataset& train, const GroupedDataset* test,
                 TrainConfig cfg, TrainState state)
    : model_(std::move(model)),
      train_(&train),
      test_(test),
      cfg_(std::move(cfg)),
      state_(std::move(state)) {
  cfg_.validate();
  if (state_.dual.lambda.size() != dual_dim(cfg_.formulation, train.num_groups())) {
    throw StateError("resume: saved multipliers do not match the formulation");
  }
  if (cfg_.formulation.kind != FormulationKind::kNft && !state_.baseline) {
    throw StateError("resume: saved state has no baseline snapshot");
  }
}

EpochRecord Trainer::evaluate(const GroupedDataset& data, const std::string& split,
                              double lr) const {
  EpochRecord rec;
  rec.epoch = state_.epoch;
  rec.split = split;
  rec.stats = dataset_group_stats(model_, data);
  if (split == "train" && state_.baseline) {
    rec.report = accuracy_gaps(*state_.baseline, rec.stats);
  } else if (split == "test" && state_.test_baseline) {
    rec.report = accuracy_gaps(*state_.test_baseline, rec.stats);
  }
  rec.lambda = state_.dual.lambda;
  rec.sparsity = model_.sparsity();
  rec.lr = lr;
  return rec;
}

EpochResult Trainer::run_epoch(const StepObserver& observer) {
  if (finished()) throw StateError("trainer: all epochs already ran");
  const int epoch = state_.epoch;
  const double lr = lr_at_epoch(cfg_.lr_schedule, epoch, cfg_.total_epochs);
  if (cfg_.gmp && cfg_.gmp->is_pruning_epoch(epoch)) apply_gmp_step(model_, *cfg_.gmp, epoch);

  const auto batches = iterate_batches(*train_, cfg_.batch_size, state_.shuffle_seed,
                                       static_cast<std::uint64_t>(epoch));
  const auto start = std::chrono::steady_clock::now();
  for (const GroupedBatch& batch : batches) {
    altgda_step(model_, batch, state_, cfg_, lr, observer);
  }
  const auto stop = std::chrono::steady_clock::now();

  EpochResult result;
  result.train_seconds = std::chrono::duration<double>(stop - start).count();
  result.records.push_back(evaluate(*train_, "train", lr));
  const bool last = epoch + 1 == cfg_.total_epochs;
  if (test_ && (cfg_.eval_test_each_epoch || last)) {
    result.records.push_back(evaluate(*test_, "test", lr));
  }
  ++state_.epoch;
  return result;
}

TrainingResult run_training(MaskedMlp model, const GroupedDataset& train,
                            const GroupedDataset* test, const TrainConfig& cfg,
                            std::uint64_t shuffle_seed) {
  Trainer trainer(std::move(model), train, test, cfg, shuffle_seed);
  TrainingResult result;
  while (!trainer.finished()) {
    EpochResult epoch = trainer.run_epoch();
    result.epoch_seconds.push_back(epoch.train_seconds);
    for (auto& rec : epoch.records) result.records.push_back(std::move(rec));
  }
  result.model = trainer.model();
  result.state = trainer.state();
  return result;
}

// ---------------------------------------------------------------------------
// State serialization

std::string serialize_train_state(const TrainState& s) {
  json j;
  j["format"] = "fairsparse-train-state";
  j["version"] = 1;
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  j["shuffle_seed"] = s.shuffle_seed;
  j["sgd"] = {{"weight_momentum", s.sgd.weight_momentum},
              {"bias_momentum", s.sgd.bias_momentum}};
  j["lambda"] = s.dual.lambda;
  if (s.buffers) {
    json groups = json::array();
    for (std::size_t g = 0; g < s.buffers->num_groups(); ++g) {
      groups.push_back(s.buffers->group(g).entries());
    }
    j["buffers"] = {{"capacity", s.buffers->capacity()},
                    {"kind", to_string(s.buffers->kind())},
                    {"entries", groups}};
  }
  if (s.baseline) {
    j["baseline"] = {{"group_accuracy", s.baseline->group_accuracy},
                     {"accuracy", s.baseline->accuracy},
                     {"group_loss", s.baseline->group_loss},
                     {"loss", s.baseline->loss}};
  }
  if (s.test_baseline) {
    j["test_baseline"] = {{"group_accuracy", s.test_baseline->group_accuracy},
                          {"group_loss", s.test_baseline->group_loss},
                          {"group_size", s.test_baseline->group_size},
                          {"accuracy", s.test_baseline->accuracy},
                          {"loss", s.test_baseline->loss}};
  }
  j["forward_passes"] = s.forward_passes;
  j["backward_passes"] = s.backward_passes;
  return j.dump(1);
}

TrainState deserialize_train_state(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "fairsparse-train-state" || j.at("version") != 1) {
      throw FormatError("train state: unknown format or version");
    }
    TrainState s;
    s.epoch = j.at("epoch").get<int>();
    s.step = j.at("step").get<std::uint64_t>();
    s.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
    s.sgd.weight_momentum =
        j.at("sgd").at("weight_momentum").get<std::vector<std::vector<double>>>();
    s.sgd.bias_momentum = j.at("sgd").at("bias_momentum").get<std::vector<std::vector<double>>>();
    s.dual.lambda = j.at("lambda").get<std::vector<double>>();
    if (j.contains("buffers")) {
      const auto& b = j.at("buffers");
      const auto entries = b.at("entries").get<std::vector<std::vector<double>>>();
      BufferSet buffers(entries.size(), b.at("capacity").get<std::size_t>(),
                        observation_kind_from_string(b.at("kind").get<std::string>()));
      for (std::size_t g = 0; g < entries.size(); ++g) {
        if (entries[g].size() > buffers.capacity()) {
          throw FormatError("train state: buffer over capacity");
        }
        for (double v : entries[g]) buffers.group(g).push(v);
      }
      s.buffers = std::move(buffers);
    }
    if (j.contains("baseline")) {
      const auto& b = j.at("baseline");
      s.baseline = BaselineSnapshot{b.at("group_accuracy").get<std::vector<double>>(),
                                    b.at("accuracy").get<double>(),
                                    b.at("group_loss").get<std::vector<double>>(),
                                    b.at("loss").get<double>()};
    }
    if (j.contains("test_baseline")) {
      const auto& b = j.at("test_baseline");
      GroupStats t;
      t.group_accuracy = b.at("group_accuracy").get<std::vector<double>>();
      t.group_loss = b.at("group_loss").get<std::vector<double>>();
      t.group_size = b.at("group_size").get<std::vector<std::size_t>>();
      t.accuracy = b.at("accuracy").get<double>();
      t.loss = b.at("loss").get<double>();
      s.test_baseline = std::move(t);
    }
    s.forward_passes = j.at("forward_passes").get<std::uint64_t>();
    s.backward_passes = j.at("backward_passes").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("train state: ") + e.what());
  }
}

}  // namespace fairsparse
