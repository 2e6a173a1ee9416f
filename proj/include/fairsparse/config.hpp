#pragma once

// Experiment configuration: a flat file of `section.key = value` lines, `#`
// starts a comment. Lists are comma separated. Every key is validated and
// unknown keys are rejected before anything runs.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairsparse/data.hpp"
#include "fairsparse/formulations.hpp"
#include "fairsparse/optimizer.hpp"
#include "fairsparse/pruning.hpp"

namespace fairsparse {

enum class DataSource { kSynthetic, kCsv };

struct StageConfig {
  int epochs = 0;
  std::size_t batch_size = 128;
  SgdConfig sgd;
  LrSchedule lr_schedule;
};

struct ExperimentConfig {
  DataSource source = DataSource::kSynthetic;
  SyntheticSpec synthetic;
  std::string csv_train;
  std::string csv_test;

  std::vector<std::size_t> hidden_dims;

  StageConfig pretrain;
  GmpSchedule gmp;
  StageConfig finetune;
  Formulation formulation;
  DualConfig dual;
  bool use_buffers = true;
  std::size_t buffer_size = 40;

  std::vector<std::uint64_t> seeds;
  bool eval_test_each_epoch = false;
  std::string run_name = "run";
  std::string output_dir = "out";

  // Training configs for the two stages.
  TrainConfig pretrain_train_config() const;
  TrainConfig finetune_train_config() const;
};

// Throws ConfigError (unknown / missing / invalid key) or ParseError
// (malformed line); `origin` names the source in messages.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::string& path);

// Every effective setting, defaults included, as sorted key/value pairs.
std::vector<std::pair<std::string, std::string>> canonical_entries(const ExperimentConfig& cfg);
// FNV-1a over the canonical entries, seeds and output location excluded.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace fairsparse
