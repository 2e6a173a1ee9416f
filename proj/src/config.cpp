#include "fairsparse/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "fairsparse/errors.hpp"

namespace fairsparse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (!value.empty() && value.back() == ',') out.push_back("");
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ConfigError("config key '" + key + "': expected a finite number, got '" + text + "'");
  }
  return v;
}

long long to_int(const std::string& key, const std::string& text) {
  long long v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

int to_epoch_count(const std::string& key, const std::string& text) {
  const long long v = to_int(key, text);
  if (v < 0 || v > 1000000) throw ConfigError("config key '" + key + "': out of range");
  return static_cast<int>(v);
}

std::size_t to_positive(const std::string& key, const std::string& text) {
  const long long v = to_int(key, text);
  if (v < 1) throw ConfigError("config key '" + key + "': must be >= 1");
  return static_cast<std::size_t>(v);
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + text +
                      "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& text, F&& convert) {
  std::vector<T> out;
  if (text.empty()) return out;
  for (const auto& item : split_list(text)) {
    if (item.empty()) throw ConfigError("config key '" + key + "': empty list item");
    out.push_back(convert(key, item));
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string&)>;

void add_stage_keys(std::map<std::string, Setter>& table, const std::string& prefix,
                    StageConfig ExperimentConfig::*stage) {
  table[prefix + ".epochs"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    (c.*stage).epochs = to_epoch_count(k, v);
  };
  table[prefix + ".batch_size"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    (c.*stage).batch_size = to_positive(k, v);
  };
  table[prefix + ".lr"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    const double lr = to_double(k, v);
    (c.*stage).sgd.lr = lr;
    (c.*stage).lr_schedule.base_lr = lr;
  };
  table[prefix + ".momentum"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    (c.*stage).sgd.momentum = to_double(k, v);
  };
  table[prefix + ".nesterov"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    (c.*stage).sgd.nesterov = to_bool(k, v);
  };
  table[prefix + ".weight_decay"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    (c.*stage).sgd.weight_decay = to_double(k, v);
  };
  table[prefix + ".milestones"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    (c.*stage).lr_schedule.milestones = to_list<double>(k, v, to_double);
  };
  table[prefix + ".gamma"] = [stage](ExperimentConfig& c, auto& k, auto& v) {
    (c.*stage).lr_schedule.gamma = to_double(k, v);
  };
}

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["data.source"] = [](ExperimentConfig& c, auto& k, auto& v) {
      if (v == "synthetic") {
        c.source = DataSource::kSynthetic;
      } else if (v == "csv") {
        c.source = DataSource::kCsv;
      } else {
        throw ConfigError("config key '" + k + "': expected synthetic or csv, got '" + v + "'");
      }
    };
    t["data.synthetic.feature_dim"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.synthetic.feature_dim = to_positive(k, v);
    };
    t["data.synthetic.num_classes"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.synthetic.num_classes = to_positive(k, v);
    };
    t["data.synthetic.group_sizes"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.synthetic.group_sizes = to_list<std::size_t>(k, v, to_positive);
    };
    t["data.synthetic.noise_scales"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.synthetic.noise_scales = to_list<double>(k, v, to_double);
    };
    t["data.synthetic.test_fraction"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.synthetic.test_fraction = to_double(k, v);
    };
    t["data.csv.train"] = [](ExperimentConfig& c, auto&, auto& v) { c.csv_train = v; };
    t["data.csv.test"] = [](ExperimentConfig& c, auto&, auto& v) { c.csv_test = v; };
    t["model.hidden"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.hidden_dims = to_list<std::size_t>(k, v, to_positive);
    };
    add_stage_keys(t, "pretrain", &ExperimentConfig::pretrain);
    add_stage_keys(t, "finetune", &ExperimentConfig::finetune);
    t["gmp.initial_sparsity"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.gmp.initial_sparsity = to_double(k, v);
    };
    t["gmp.final_sparsity"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.gmp.final_sparsity = to_double(k, v);
    };
    t["gmp.start_epoch"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.gmp.start_epoch = to_epoch_count(k, v);
    };
    t["gmp.end_epoch"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.gmp.end_epoch = to_epoch_count(k, v);
    };
    t["gmp.frequency"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.gmp.frequency = to_epoch_count(k, v);
    };
    // Formulation name and epsilon are combined after parsing.
    t["finetune.formulation"] = [](ExperimentConfig&, auto&, auto&) {};
    t["finetune.epsilon"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.formulation.epsilon = to_double(k, v);
    };
    t["finetune.dual_lr"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.dual.lr = to_double(k, v);
    };
    t["finetune.use_buffers"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.use_buffers = to_bool(k, v);
    };
    t["finetune.buffer_size"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.buffer_size = to_positive(k, v);
    };
    t["seeds"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.seeds = to_list<std::uint64_t>(k, v, to_u64);
    };
    t["eval.test_each_epoch"] = [](ExperimentConfig& c, auto& k, auto& v) {
      c.eval_test_each_epoch = to_bool(k, v);
    };
    t["run.name"] = [](ExperimentConfig& c, auto& k, auto& v) {
      if (v.empty() || v.find_first_of("/\\,\n") != std::string::npos) {
        throw ConfigError("config key '" + k + "': name must be non-empty without / \\ or ,");
      }
      c.run_name = v;
    };
    t["output.dir"] = [](ExperimentConfig& c, auto&, auto& v) { c.output_dir = v; };
    return t;
  }();
  return table;
}

void require(const std::map<std::string, std::string>& kv, const std::string& key,
             const std::string& why = "") {
  if (!kv.count(key)) {
    throw ConfigError("config is missing required key '" + key + "'" +
                      (why.empty() ? "" : " (" + why + ")"));
  }
}

void validate(const ExperimentConfig& c) {
  if (c.source == DataSource::kSynthetic) {
    c.synthetic.validate();
  } else if (c.csv_train.empty() || c.csv_test.empty()) {
    throw ConfigError("csv data source needs data.csv.train and data.csv.test");
  }
  if (c.hidden_dims.empty()) throw ConfigError("model.hidden must list at least one width");
  if (c.pretrain.epochs < 1) throw ConfigError("pretrain.epochs must be >= 1");
  c.pretrain_train_config().validate();
  c.finetune_train_config().validate();
  if (c.hidden_dims.size() < 2) {
    throw ConfigError("model.hidden needs >= 2 hidden layers so that an interior layer can be "
                      "pruned");
  }
  if (c.seeds.empty()) throw ConfigError("seeds must list at least one seed");
  std::set<std::uint64_t> unique(c.seeds.begin(), c.seeds.end());
  if (unique.size() != c.seeds.size()) throw ConfigError("seeds contains duplicates");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += f(xs[i]);
  }
  return out;
}

void add_stage_entries(std::vector<std::pair<std::string, std::string>>& out,
                       const std::string& prefix, const StageConfig& s) {
  out.emplace_back(prefix + ".batch_size", std::to_string(s.batch_size));
  out.emplace_back(prefix + ".epochs", std::to_string(s.epochs));
  out.emplace_back(prefix + ".gamma", fmt_double(s.lr_schedule.gamma));
  out.emplace_back(prefix + ".lr", fmt_double(s.sgd.lr));
  out.emplace_back(prefix + ".milestones", join(s.lr_schedule.milestones, fmt_double));
  out.emplace_back(prefix + ".momentum", fmt_double(s.sgd.momentum));
  out.emplace_back(prefix + ".nesterov", s.sgd.nesterov ? "true" : "false");
  out.emplace_back(prefix + ".weight_decay", fmt_double(s.sgd.weight_decay));
}

}  // namespace

TrainConfig ExperimentConfig::pretrain_train_config() const {
  TrainConfig t;
  t.formulation = Formulation{};
  t.sgd = pretrain.sgd;
  t.lr_schedule = pretrain.lr_schedule;
  t.use_buffers = false;
  t.batch_size = pretrain.batch_size;
  t.total_epochs = pretrain.epochs;
  t.eval_test_each_epoch = eval_test_each_epoch;
  return t;
}

TrainConfig ExperimentConfig::finetune_train_config() const {
  TrainConfig t;
  t.formulation = formulation;
  t.sgd = finetune.sgd;
  t.lr_schedule = finetune.lr_schedule;
  t.dual = dual;
  t.use_buffers = use_buffers;
  t.buffer_size = buffer_size;
  t.batch_size = finetune.batch_size;
  t.total_epochs = finetune.epochs;
  t.gmp = gmp;
  t.eval_test_each_epoch = eval_test_each_epoch;
  return t;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = unquote(trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!key_table().count(key)) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (kv.count(key)) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    kv[key] = value;
  }

  ExperimentConfig cfg;
  cfg.finetune.epochs = 60;
  for (const auto& [key, value] : kv) key_table().at(key)(cfg, key, value);

  require(kv, "data.source");
  require(kv, "model.hidden");
  require(kv, "pretrain.epochs");
  require(kv, "finetune.formulation");
  require(kv, "seeds");
  const double eps = cfg.formulation.epsilon;
  cfg.formulation = Formulation::from_name(kv.at("finetune.formulation"), eps);
  if (cfg.formulation.has_tolerance()) {
    require(kv, "finetune.epsilon", "needed by " + cfg.formulation.name());
  } else if (kv.count("finetune.epsilon")) {
    throw ConfigError("finetune.epsilon has no meaning for formulation " +
                      cfg.formulation.name());
  }
  if (cfg.formulation.kind != FormulationKind::kNft) {
    require(kv, "finetune.dual_lr", "needed by " + cfg.formulation.name());
  } else {
    // NFT ignores these; keep them neutral so they do not leak into the hash.
    cfg.use_buffers = false;
  }
  if (cfg.source == DataSource::kCsv) {
    require(kv, "data.csv.train");
    require(kv, "data.csv.test");
    for (const auto& [key, _] : kv) {
      if (key.rfind("data.synthetic.", 0) == 0) {
        throw ConfigError("config key '" + key + "' conflicts with data.source = csv");
      }
    }
  } else if (kv.count("data.csv.train") || kv.count("data.csv.test")) {
    throw ConfigError("data.csv.* keys conflict with data.source = synthetic");
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::vector<std::pair<std::string, std::string>> canonical_entries(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  if (c.source == DataSource::kSynthetic) {
    out.emplace_back("data.source", "synthetic");
    out.emplace_back("data.synthetic.feature_dim", std::to_string(c.synthetic.feature_dim));
    out.emplace_back("data.synthetic.group_sizes",
                     join(c.synthetic.group_sizes, [](auto v) { return std::to_string(v); }));
    out.emplace_back("data.synthetic.noise_scales", join(c.synthetic.noise_scales, fmt_double));
    out.emplace_back("data.synthetic.num_classes", std::to_string(c.synthetic.num_classes));
    out.emplace_back("data.synthetic.test_fraction", fmt_double(c.synthetic.test_fraction));
  } else {
    out.emplace_back("data.source", "csv");
    out.emplace_back("data.csv.test", c.csv_test);
    out.emplace_back("data.csv.train", c.csv_train);
  }
  out.emplace_back("eval.test_each_epoch", c.eval_test_each_epoch ? "true" : "false");
  add_stage_entries(out, "finetune", c.finetune);
  out.emplace_back("finetune.formulation", c.formulation.name());
  if (c.formulation.has_tolerance()) {
    out.emplace_back("finetune.epsilon", fmt_double(c.formulation.epsilon));
  }
  if (c.formulation.kind != FormulationKind::kNft) {
    out.emplace_back("finetune.dual_lr", fmt_double(c.dual.lr));
    out.emplace_back("finetune.use_buffers", c.use_buffers ? "true" : "false");
    if (c.use_buffers) out.emplace_back("finetune.buffer_size", std::to_string(c.buffer_size));
  }
  out.emplace_back("gmp.end_epoch", std::to_string(c.gmp.end_epoch));
  out.emplace_back("gmp.final_sparsity", fmt_double(c.gmp.final_sparsity));
  out.emplace_back("gmp.frequency", std::to_string(c.gmp.frequency));
  out.emplace_back("gmp.initial_sparsity", fmt_double(c.gmp.initial_sparsity));
  out.emplace_back("gmp.start_epoch", std::to_string(c.gmp.start_epoch));
  out.emplace_back("model.hidden", join(c.hidden_dims, [](auto v) { return std::to_string(v); }));
  out.emplace_back("output.dir", c.output_dir);
  add_stage_entries(out, "pretrain", c.pretrain);
  out.emplace_back("run.name", c.run_name);
  out.emplace_back("seeds", join(c.seeds, [](auto v) { return std::to_string(v); }));
  std::sort(out.begin(), out.end());
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [key, value] : canonical_entries(cfg)) {
    if (key == "seeds" || key.rfind("output.", 0) == 0) continue;
    feed(key);
    feed("=");
    feed(value);
    feed("\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fairsparse
