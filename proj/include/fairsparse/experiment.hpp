#pragma once

// The three-stage pipeline (dense pretraining, pruning + mitigated
// fine-tuning, evaluation) plus multi-seed reporting. Each seed writes into
// <out>/seed_<seed>/.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairsparse/config.hpp"
#include "fairsparse/data.hpp"
#include "fairsparse/group_metrics.hpp"
#include "fairsparse/model.hpp"
#include "fairsparse/optimizer.hpp"

namespace fairsparse {

namespace fs = std::filesystem;

TrainTestSplit load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed);
MlpSpec experiment_model_spec(const ExperimentConfig& cfg, const GroupedDataset& train);
fs::path seed_directory(const fs::path& out_dir, std::uint64_t seed);

// Fixed schema: epoch,split,accuracy,loss,acc_g<i>...,delta,psi_g<i>...,
// max_psi,psi_pw,lambda_<j>...,sparsity,lr. Gap columns are blank when the
// record has no baseline.
std::string metrics_csv(const std::vector<EpochRecord>& records, std::size_t num_groups,
                        std::size_t num_multipliers);

struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws FormatError if absent
};
// Throws IoError if unreadable, ParseError on malformed content.
MetricsTable read_metrics_csv(const fs::path& path);

// Selects the NFT+ES iterate: the first epoch at or after the end of pruning
// with the highest test accuracy.
std::optional<int> early_stopping_epoch(const std::vector<EpochRecord>& records, int first_epoch);

// Context recorded in every manifest so a stage can be re-run.
struct Invocation {
  std::string config_path;  // may be empty for in-process use
  fs::path out_dir;
};

struct PretrainResult {
  MaskedMlp model;
  std::vector<EpochRecord> records;
  fs::path checkpoint;
  fs::path metrics;
};
PretrainResult cmd_pretrain(const ExperimentConfig& cfg, std::uint64_t seed,
                            const Invocation& inv);

struct SparsifyResult {
  TrainingResult training;
  std::optional<int> early_stopped_epoch;
  fs::path checkpoint;
  fs::path metrics;
  fs::path summary;
};
// `dense_checkpoint` may contain `{seed}`; empty means <seed dir>/dense.ckpt.
SparsifyResult cmd_sparsify(const ExperimentConfig& cfg, std::uint64_t seed,
                            const Invocation& inv, const std::string& dense_checkpoint = "");

struct EvaluationResult {
  GroupStats train_stats;
  GroupStats test_stats;
  DisparityReport train;
  DisparityReport test;
  double sparsity = 0.0;
  fs::path output;
};
// Empty paths default to <seed dir>/sparse.ckpt and <seed dir>/dense.ckpt.
EvaluationResult cmd_evaluate(const ExperimentConfig& cfg, std::uint64_t seed,
                              const Invocation& inv, const std::string& checkpoint = "",
                              const std::string& baseline = "");

struct ReportRow {
  std::string name;  // run name, "+es" suffix for early-stopped NFT iterates
  std::string config_hash;
  std::size_t seeds = 0;
  // mean / sample std (ddof 1, 0 for a single seed) per metric
  std::map<std::string, std::pair<double, double>> metrics;
};
struct Report {
  std::vector<ReportRow> rows;
  std::string csv;
  std::string table;
};
// Metrics aggregated: test_accuracy, train_accuracy, train_max_psi,
// test_max_psi, train_psi_pw, test_psi_pw.
extern const std::vector<std::string> kReportMetrics;
// Scans the directories recursively for run summaries.
Report cmd_report(const std::vector<fs::path>& run_dirs);

std::pair<double, double> mean_and_std(const std::vector<double>& xs);

struct ToleranceSuggestion {
  std::vector<double> final_max_psi;  // one per metrics file found
  double mean_max_psi = 0.0;
  double epsilon = 0.0;
  std::optional<std::string> warning;
};
// `dir` is a seed directory or a run directory holding seed_* subdirectories.
ToleranceSuggestion cmd_suggest_tolerance(const fs::path& dir);

}  // namespace fairsparse
