#include "fairsparse/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fairsparse/errors.hpp"
#include "fairsparse/rng.hpp"
#include "json.hpp"

namespace fairsparse {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path prepare_seed_dir(const Invocation& inv, std::uint64_t seed) {
  const fs::path dir = seed_directory(inv.out_dir, seed);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

std::string substitute_seed(std::string pattern, std::uint64_t seed) {
  const std::string token = "{seed}";
  for (auto pos = pattern.find(token); pos != std::string::npos; pos = pattern.find(token)) {
    pattern.replace(pos, token.size(), std::to_string(seed));
  }
  return pattern;
}

void write_manifest(const fs::path& dir, const std::string& subcommand,
                    const ExperimentConfig& cfg, std::uint64_t seed, const Invocation& inv,
                    const ordered_json& artifacts) {
  ordered_json m;
  m["subcommand"] = subcommand;
  m["config_hash"] = config_hash(cfg);
  m["config_path"] = inv.config_path;
  m["seed"] = seed;
  m["out_dir"] = inv.out_dir.string();
  m["artifacts"] = artifacts;
  ordered_json settings = ordered_json::object();
  for (const auto& [key, value] : canonical_entries(cfg)) settings[key] = value;
  m["config"] = settings;
  write_text(dir / (subcommand + ".manifest.json"), m.dump(2) + "\n");
}

ordered_json record_json(const EpochRecord& rec) {
  ordered_json j;
  j["epoch"] = rec.epoch;
  j["split"] = rec.split;
  j["accuracy"] = rec.stats.accuracy;
  j["loss"] = rec.stats.loss;
  j["group_accuracy"] = rec.stats.group_accuracy;
  if (rec.report) {
    j["delta"] = rec.report->delta;
    j["psi"] = rec.report->psi;
    j["max_psi"] = rec.report->max_psi;
    j["psi_pw"] = rec.report->psi_pw;
  }
  j["lambda"] = rec.lambda;
  j["sparsity"] = rec.sparsity;
  return j;
}

const EpochRecord* find_record(const std::vector<EpochRecord>& records, int epoch,
                               const std::string& split) {
  for (const auto& r : records) {
    if (r.epoch == epoch && r.split == split) return &r;
  }
  return nullptr;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw ParseError(where + ": expected a number, got '" + text + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

TrainTestSplit load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.source == DataSource::kSynthetic) {
    return synthetic_generate(cfg.synthetic, derive_seed(seed, seed_stream::kData));
  }
  TrainTestSplit split;
  split.train = load_csv(cfg.csv_train);
  split.test = load_csv(cfg.csv_test, &split.train.group_names());
  if (split.test.feature_dim() != split.train.feature_dim()) {
    throw ConfigError("test csv has " + std::to_string(split.test.feature_dim()) +
                      " features, train csv has " + std::to_string(split.train.feature_dim()));
  }
  if (split.test.num_classes() > split.train.num_classes()) {
    throw ConfigError("test csv has labels that never occur in the train csv");
  }
  return split;
}

MlpSpec experiment_model_spec(const ExperimentConfig& cfg, const GroupedDataset& train) {
  MlpSpec spec{train.feature_dim(), cfg.hidden_dims, train.num_classes()};
  spec.validate();
  return spec;
}

fs::path seed_directory(const fs::path& out_dir, std::uint64_t seed) {
  return out_dir / ("seed_" + std::to_string(seed));
}

std::string metrics_csv(const std::vector<EpochRecord>& records, std::size_t num_groups,
                        std::size_t num_multipliers) {
  std::string out = "epoch,split,accuracy,loss";
  for (std::size_t g = 0; g < num_groups; ++g) out += ",acc_g" + std::to_string(g);
  out += ",delta";
  for (std::size_t g = 0; g < num_groups; ++g) out += ",psi_g" + std::to_string(g);
  out += ",max_psi,psi_pw";
  for (std::size_t j = 0; j < num_multipliers; ++j) out += ",lambda_" + std::to_string(j);
  out += ",sparsity,lr\n";
  for (const auto& r : records) {
    if (r.stats.group_accuracy.size() != num_groups || r.lambda.size() != num_multipliers) {
      throw DimensionError("metrics csv: record shape does not match the header");
    }
    out += std::to_string(r.epoch) + "," + r.split + "," + fmt(r.stats.accuracy) + "," +
           fmt(r.stats.loss);
    for (double a : r.stats.group_accuracy) out += "," + fmt(a);
    if (r.report) {
      out += "," + fmt(r.report->delta);
      for (double p : r.report->psi) out += "," + fmt(p);
      out += "," + fmt(r.report->max_psi) + "," + fmt(r.report->psi_pw);
    } else {
      out += std::string(num_groups + 3, ',');
    }
    for (double l : r.lambda) out += "," + fmt(l);
    out += "," + fmt(r.sparsity) + "," + fmt(r.lr) + "\n";
  }
  return out;
}

std::size_t MetricsTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("metrics file has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

MetricsTable read_metrics_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  MetricsTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto cells = split_csv_line(line);
    if (line_no == 1) {
      if (cells.size() < 2 || cells[0] != "epoch" || cells[1] != "split") {
        throw ParseError(path.string() + ":1: not a metrics header");
      }
      t.header = std::move(cells);
      continue;
    }
    if (line.empty()) continue;
    if (cells.size() != t.header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw ParseError(path.string() + ": empty metrics file");
  return t;
}

std::optional<int> early_stopping_epoch(const std::vector<EpochRecord>& records,
                                        int first_epoch) {
  std::optional<int> best;
  double best_acc = -1.0;
  for (const auto& r : records) {
    if (r.split != "test" || r.epoch < first_epoch) continue;
    if (r.stats.accuracy > best_acc) {
      best_acc = r.stats.accuracy;
      best = r.epoch;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

PretrainResult cmd_pretrain(const ExperimentConfig& cfg, std::uint64_t seed,
                            const Invocation& inv) {
  const TrainTestSplit data = load_experiment_data(cfg, seed);
  const MlpSpec spec = experiment_model_spec(cfg, data.train);
  spec.validate_for_pruning();
  const fs::path dir = prepare_seed_dir(inv, seed);

  Trainer trainer(MaskedMlp::init(spec, derive_seed(seed, seed_stream::kInit)), data.train,
                  &data.test, cfg.pretrain_train_config(),
                  derive_seed(seed, seed_stream::kPretrainShuffle), /*with_baseline=*/false);
  PretrainResult result;
  while (!trainer.finished()) {
    for (auto& rec : trainer.run_epoch().records) result.records.push_back(std::move(rec));
  }
  result.model = trainer.model();
  result.checkpoint = dir / "dense.ckpt";
  result.metrics = dir / "pretrain_metrics.csv";
  save_checkpoint(result.model, result.checkpoint.string());
  write_text(result.metrics, metrics_csv(result.records, data.train.num_groups(), 0));
  write_manifest(dir, "pretrain", cfg, seed, inv,
                 {{"checkpoint", result.checkpoint.string()},
                  {"metrics", result.metrics.string()}});
  return result;
}

SparsifyResult cmd_sparsify(const ExperimentConfig& cfg, std::uint64_t seed,
                            const Invocation& inv, const std::string& dense_checkpoint) {
  const TrainTestSplit data = load_experiment_data(cfg, seed);
  const MlpSpec spec = experiment_model_spec(cfg, data.train);
  spec.validate_for_pruning();
  const fs::path dir = prepare_seed_dir(inv, seed);
  const fs::path dense_path = dense_checkpoint.empty()
                                  ? dir / "dense.ckpt"
                                  : fs::path(substitute_seed(dense_checkpoint, seed));
  MaskedMlp dense = load_checkpoint(dense_path.string(), spec);

  const TrainConfig tc = cfg.finetune_train_config();
  Trainer trainer(std::move(dense), data.train, &data.test, tc,
                  derive_seed(seed, seed_stream::kFinetuneShuffle));
  const bool early_stop = cfg.formulation.kind == FormulationKind::kNft && cfg.eval_test_each_epoch;
  SparsifyResult result;
  std::optional<MaskedMlp> best_model;
  double best_test = -1.0;
  while (!trainer.finished()) {
    EpochResult epoch = trainer.run_epoch();
    result.training.epoch_seconds.push_back(epoch.train_seconds);
    for (auto& rec : epoch.records) {
      if (early_stop && rec.split == "test" && rec.epoch >= cfg.gmp.end_epoch &&
          rec.stats.accuracy > best_test) {
        best_test = rec.stats.accuracy;
        best_model = trainer.model();
      }
      result.training.records.push_back(std::move(rec));
    }
  }
  result.training.model = trainer.model();
  result.training.state = trainer.state();
  if (early_stop) result.early_stopped_epoch = early_stopping_epoch(result.training.records,
                                                                    cfg.gmp.end_epoch);

  const std::size_t num_groups = data.train.num_groups();
  result.checkpoint = dir / "sparse.ckpt";
  result.metrics = dir / "metrics.csv";
  result.summary = dir / "summary.json";
  const fs::path state_path = dir / "train_state.json";
  save_checkpoint(result.training.model, result.checkpoint.string());
  write_text(result.metrics, metrics_csv(result.training.records, num_groups,
                                         dual_dim(cfg.formulation, num_groups)));
  write_text(state_path, serialize_train_state(result.training.state) + "\n");

  ordered_json artifacts = {{"dense_checkpoint", dense_path.string()},
                            {"checkpoint", result.checkpoint.string()},
                            {"metrics", result.metrics.string()},
                            {"summary", result.summary.string()},
                            {"train_state", state_path.string()}};

  const int last = tc.total_epochs - 1;
  ordered_json summary;
  summary["run_name"] = cfg.run_name;
  summary["config_hash"] = config_hash(cfg);
  summary["seed"] = seed;
  summary["formulation"] = cfg.formulation.name();
  summary["epochs"] = tc.total_epochs;
  summary["sparsity"] = result.training.model.sparsity();
  summary["group_names"] = data.train.group_names();
  summary["final"] = {{"train", record_json(*find_record(result.training.records, last, "train"))},
                      {"test", record_json(*find_record(result.training.records, last, "test"))}};
  if (result.early_stopped_epoch) {
    const int e = *result.early_stopped_epoch;
    summary["early_stopped"] = {
        {"epoch", e},
        {"train", record_json(*find_record(result.training.records, e, "train"))},
        {"test", record_json(*find_record(result.training.records, e, "test"))}};
    const fs::path es_path = dir / "sparse_es.ckpt";
    save_checkpoint(*best_model, es_path.string());
    artifacts["early_stopped_checkpoint"] = es_path.string();
  }
  write_text(result.summary, summary.dump(2) + "\n");
  write_manifest(dir, "sparsify", cfg, seed, inv, artifacts);
  return result;
}

EvaluationResult cmd_evaluate(const ExperimentConfig& cfg, std::uint64_t seed,
                              const Invocation& inv, const std::string& checkpoint,
                              const std::string& baseline) {
  const TrainTestSplit data = load_experiment_data(cfg, seed);
  const MlpSpec spec = experiment_model_spec(cfg, data.train);
  const fs::path dir = prepare_seed_dir(inv, seed);
  const fs::path sparse_path =
      checkpoint.empty() ? dir / "sparse.ckpt" : fs::path(substitute_seed(checkpoint, seed));
  const fs::path dense_path =
      baseline.empty() ? dir / "dense.ckpt" : fs::path(substitute_seed(baseline, seed));
  const MaskedMlp sparse = load_checkpoint(sparse_path.string(), spec);
  const MaskedMlp dense = load_checkpoint(dense_path.string(), spec);

  EvaluationResult r;
  r.train_stats = dataset_group_stats(sparse, data.train);
  r.test_stats = dataset_group_stats(sparse, data.test);
  r.train = accuracy_gaps(dataset_group_stats(dense, data.train), r.train_stats);
  r.test = accuracy_gaps(dataset_group_stats(dense, data.test), r.test_stats);
  r.sparsity = sparse.sparsity();
  r.output = dir / "evaluation.json";

  auto split_json = [](const GroupStats& s, const DisparityReport& d) {
    ordered_json j;
    j["accuracy"] = s.accuracy;
    j["loss"] = s.loss;
    j["group_accuracy"] = s.group_accuracy;
    j["group_size"] = s.group_size;
    j["delta"] = d.delta;
    j["group_delta"] = d.group_delta;
    j["psi"] = d.psi;
    j["max_psi"] = d.max_psi;
    j["psi_pw"] = d.psi_pw;
    return j;
  };
  ordered_json out;
  out["checkpoint"] = sparse_path.string();
  out["baseline"] = dense_path.string();
  out["sparsity"] = r.sparsity;
  out["train"] = split_json(r.train_stats, r.train);
  out["test"] = split_json(r.test_stats, r.test);
  write_text(r.output, out.dump(2) + "\n");
  write_manifest(dir, "evaluate", cfg, seed, inv,
                 {{"checkpoint", sparse_path.string()},
                  {"baseline", dense_path.string()},
                  {"evaluation", r.output.string()}});
  return r;
}

// ---------------------------------------------------------------------------

const std::vector<std::string> kReportMetrics = {"test_accuracy", "train_accuracy",
                                                 "train_max_psi", "test_max_psi",
                                                 "train_psi_pw",  "test_psi_pw"};

std::pair<double, double> mean_and_std(const std::vector<double>& xs) {
  if (xs.empty()) throw AggregationError("cannot aggregate an empty sample");
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

Report cmd_report(const std::vector<fs::path>& run_dirs) {
  std::set<fs::path> files;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw AggregationError("'" + dir.string() + "' is not a directory");
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().filename() == "summary.json") {
        files.insert(fs::weakly_canonical(entry.path()));
      }
    }
  }
  if (files.empty()) throw AggregationError("no completed runs found");

  struct Cell {
    std::string hash;
    std::set<std::uint64_t> seeds;
    std::map<std::string, std::vector<double>> values;
  };
  std::map<std::string, Cell> cells;
  auto add = [&](const std::string& name, const std::string& hash, std::uint64_t seed,
                 const json& train, const json& test, const fs::path& file) {
    Cell& c = cells[name];
    if (c.hash.empty()) c.hash = hash;
    if (c.hash != hash) {
      throw AggregationError("runs named '" + name + "' were produced by different configs (" +
                             c.hash + " vs " + hash + ", " + file.string() + ")");
    }
    if (!c.seeds.insert(seed).second) {
      throw AggregationError("seed " + std::to_string(seed) + " of '" + name +
                             "' appears more than once");
    }
    c.values["test_accuracy"].push_back(test.at("accuracy").get<double>());
    c.values["train_accuracy"].push_back(train.at("accuracy").get<double>());
    c.values["train_max_psi"].push_back(train.at("max_psi").get<double>());
    c.values["test_max_psi"].push_back(test.at("max_psi").get<double>());
    c.values["train_psi_pw"].push_back(train.at("psi_pw").get<double>());
    c.values["test_psi_pw"].push_back(test.at("psi_pw").get<double>());
  };
  for (const auto& file : files) {
    try {
      const json s = json::parse(read_text(file));
      const std::string name = s.at("run_name").get<std::string>();
      const std::string hash = s.at("config_hash").get<std::string>();
      const auto seed = s.at("seed").get<std::uint64_t>();
      add(name, hash, seed, s.at("final").at("train"), s.at("final").at("test"), file);
      if (s.contains("early_stopped")) {
        add(name + "+es", hash, seed, s.at("early_stopped").at("train"),
            s.at("early_stopped").at("test"), file);
      }
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ": " + e.what());
    }
  }

  Report report;
  report.csv = "run,config_hash,seeds";
  for (const auto& m : kReportMetrics) report.csv += "," + m + "_mean," + m + "_std";
  report.csv += "\n";
  std::vector<std::vector<std::string>> table{{"run", "seeds"}};
  for (const auto& m : kReportMetrics) table[0].push_back(m);
  for (const auto& [name, cell] : cells) {
    ReportRow row;
    row.name = name;
    row.config_hash = cell.hash;
    row.seeds = cell.seeds.size();
    report.csv += name + "," + cell.hash + "," + std::to_string(row.seeds);
    std::vector<std::string> line{name, std::to_string(row.seeds)};
    for (const auto& m : kReportMetrics) {
      const auto ms = mean_and_std(cell.values.at(m));
      row.metrics[m] = ms;
      report.csv += "," + fmt(ms.first) + "," + fmt(ms.second);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f +/- %.4f", ms.first, ms.second);
      line.push_back(buf);
    }
    report.csv += "\n";
    table.push_back(std::move(line));
    report.rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(table[0].size(), 0);
  for (const auto& line : table) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  for (const auto& line : table) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) text += "  ";
      text += line[i] + std::string(width[i] - line[i].size(), ' ');
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    report.table += text + "\n";
  }
  return report;
}

ToleranceSuggestion cmd_suggest_tolerance(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(dir / "metrics.csv")) {
    files.push_back(dir / "metrics.csv");
  } else if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (entry.is_directory() && name.rfind("seed_", 0) == 0 &&
          fs::is_regular_file(entry.path() / "metrics.csv")) {
        files.push_back(entry.path() / "metrics.csv");
      }
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw StateError("no fine-tuning metrics found under '" + dir.string() + "'");

  ToleranceSuggestion s;
  for (const auto& file : files) {
    const MetricsTable t = read_metrics_csv(file);
    const std::size_t epoch_col = t.column("epoch");
    const std::size_t split_col = t.column("split");
    const std::size_t psi_col = t.column("max_psi");
    const std::vector<std::string>* last = nullptr;
    double last_epoch = -1.0;
    for (const auto& row : t.rows) {
      if (row[split_col] != "train") continue;
      const double e = parse_number(row[epoch_col], file.string());
      if (e > last_epoch) {
        last_epoch = e;
        last = &row;
      }
    }
    if (!last) throw StateError(file.string() + ": no train records");
    if ((*last)[psi_col].empty()) {
      throw StateError(file.string() + ": train records carry no disparity (not a fine-tuning run)");
    }
    s.final_max_psi.push_back(parse_number((*last)[psi_col], file.string()));
  }
  s.mean_max_psi = mean_and_std(s.final_max_psi).first;
  if (s.mean_max_psi <= 0.0) {
    s.epsilon = 0.0;
    s.warning = "final train max psi is not positive; there is no disparity to constrain";
  } else {
    s.epsilon = 0.5 * s.mean_max_psi;
  }
  return s;
}

}  // namespace fairsparse
