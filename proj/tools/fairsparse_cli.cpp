// fairsparse: pretrain, prune + fine-tune, evaluate and aggregate runs.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fairsparse/config.hpp"
#include "fairsparse/errors.hpp"
#include "fairsparse/experiment.hpp"
#include "json.hpp"

namespace {

using fairsparse::ExperimentConfig;
using fairsparse::Invocation;

void print_error(const std::string& kind, const std::string& message) {
  nlohmann::json j = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
}

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "experiment config file")->required();
  cmd->add_option("--seed", args.seed, "run only this seed instead of the configured list");
  cmd->add_option("--out", args.out, "output directory (overrides output.dir)");
}

std::vector<std::uint64_t> seeds_of(const ExperimentConfig& cfg, const CommonArgs& args) {
  if (args.seed) return {*args.seed};
  return cfg.seeds;
}

Invocation invocation(const ExperimentConfig& cfg, const CommonArgs& args) {
  return Invocation{args.config, args.out.empty() ? cfg.output_dir : args.out};
}

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prune small classifiers while bounding per-group excess accuracy gaps"};
  app.require_subcommand(1);

  CommonArgs pretrain_args, sparsify_args, evaluate_args;
  std::string dense_path, checkpoint_path, baseline_path, report_out, tolerance_dir;
  std::vector<std::string> report_dirs;

  auto* pretrain = app.add_subcommand("pretrain", "train the dense model");
  add_common(pretrain, pretrain_args);

  auto* sparsify = app.add_subcommand("sparsify", "prune and fine-tune a dense checkpoint");
  add_common(sparsify, sparsify_args);
  sparsify->add_option("--dense", dense_path,
                       "dense checkpoint ({seed} is substituted; default <out>/seed_<s>/dense.ckpt)");

  auto* evaluate = app.add_subcommand("evaluate", "disparity of a checkpoint against its dense baseline");
  add_common(evaluate, evaluate_args);
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate");
  evaluate->add_option("--baseline", baseline_path, "dense baseline checkpoint");

  auto* report = app.add_subcommand("report", "aggregate runs across seeds");
  report->add_option("dirs", report_dirs, "run directories")->required();
  report->add_option("--out", report_out, "write report.csv and report.txt here");

  auto* suggest = app.add_subcommand("suggest-tolerance", "suggest epsilon from an NFT run");
  suggest->add_option("dir", tolerance_dir, "NFT run or seed directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("UsageError", e.what());
    return 2;
  }

  try {
    if (*pretrain) {
      const auto cfg = fairsparse::load_config(pretrain_args.config);
      const auto inv = invocation(cfg, pretrain_args);
      for (auto seed : seeds_of(cfg, pretrain_args)) {
        const auto r = fairsparse::cmd_pretrain(cfg, seed, inv);
        const auto& last = *std::find_if(r.records.rbegin(), r.records.rend(),
                                         [](const auto& rec) { return rec.split == "train"; });
        std::cout << "seed " << seed << ": train accuracy " << f4(last.stats.accuracy)
                  << " -> " << r.checkpoint.string() << "\n";
      }
    } else if (*sparsify) {
      const auto cfg = fairsparse::load_config(sparsify_args.config);
      const auto inv = invocation(cfg, sparsify_args);
      for (auto seed : seeds_of(cfg, sparsify_args)) {
        const auto r = fairsparse::cmd_sparsify(cfg, seed, inv, dense_path);
        std::cout << "seed " << seed << ": sparsity " << f4(r.training.model.sparsity())
                  << " -> " << r.metrics.string() << "\n";
      }
    } else if (*evaluate) {
      const auto cfg = fairsparse::load_config(evaluate_args.config);
      const auto inv = invocation(cfg, evaluate_args);
      for (auto seed : seeds_of(cfg, evaluate_args)) {
        const auto r = fairsparse::cmd_evaluate(cfg, seed, inv, checkpoint_path, baseline_path);
        std::cout << "seed " << seed << ": train max_psi " << f4(r.train.max_psi) << " psi_pw "
                  << f4(r.train.psi_pw) << ", test max_psi " << f4(r.test.max_psi) << " psi_pw "
                  << f4(r.test.psi_pw) << " -> " << r.output.string() << "\n";
      }
    } else if (*report) {
      std::vector<fairsparse::fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const auto r = fairsparse::cmd_report(dirs);
      std::cout << r.table;
      if (!report_out.empty()) {
        fairsparse::fs::create_directories(report_out);
        std::ofstream(fairsparse::fs::path(report_out) / "report.csv") << r.csv;
        std::ofstream(fairsparse::fs::path(report_out) / "report.txt") << r.table;
      }
    } else if (*suggest) {
      const auto s = fairsparse::cmd_suggest_tolerance(tolerance_dir);
      if (s.warning) std::cerr << "warning: " << *s.warning << "\n";
      nlohmann::json j = {{"final_train_max_psi", s.final_max_psi},
                          {"mean_final_train_max_psi", s.mean_max_psi},
                          {"suggested_epsilon", s.epsilon}};
      std::cout << j.dump() << "\n";
    }
  } catch (const fairsparse::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("InternalError", e.what());
    return 1;
  }
  return 0;
}
