#include "fairsparse/data.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "fairsparse/errors.hpp"
#include "fairsparse/rng.hpp"

namespace fairsparse {

GroupedDataset::GroupedDataset(std::size_t feature_dim, std::vector<double> features,
                               std::vector<int> labels, std::vector<int> groups,
                               std::vector<std::string> group_names, std::size_t num_classes,
                               bool allow_empty_groups)
    : feature_dim_(feature_dim),
      features_(std::move(features)),
      labels_(std::move(labels)),
      groups_(std::move(groups)),
      group_names_(std::move(group_names)),
      num_classes_(num_classes) {
  if (labels_.size() != groups_.size() || features_.size() != labels_.size() * feature_dim_) {
    throw DimensionError("dataset: features, labels and groups disagree in length");
  }
  if (num_classes_ < 2) throw ConfigError("dataset: need at least 2 classes");
  std::vector<std::size_t> seen(group_names_.size(), 0);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= num_classes_) {
      throw IndexError("dataset: label " + std::to_string(labels_[i]) + " outside [0, " +
                       std::to_string(num_classes_) + ")");
    }
    if (groups_[i] < 0 || static_cast<std::size_t>(groups_[i]) >= group_names_.size()) {
      throw IndexError("dataset: group id " + std::to_string(groups_[i]) + " outside [0, " +
                       std::to_string(group_names_.size()) + ")");
    }
    ++seen[static_cast<std::size_t>(groups_[i])];
  }
  if (!allow_empty_groups) {
    for (std::size_t g = 0; g < seen.size(); ++g) {
      if (seen[g] == 0) throw ConfigError("dataset: group '" + group_names_[g] + "' is empty");
    }
  }
}

std::vector<std::size_t> GroupedDataset::group_sizes() const {
  std::vector<std::size_t> sizes(num_groups(), 0);
  for (int g : groups_) ++sizes[static_cast<std::size_t>(g)];
  return sizes;
}

Tensor GroupedDataset::feature_rows(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  std::vector<double> rows(features_.begin() + static_cast<std::ptrdiff_t>(begin * feature_dim_),
                           features_.begin() + static_cast<std::ptrdiff_t>(end * feature_dim_));
  return Tensor::matrix(end - begin, feature_dim_, std::move(rows));
}

GroupedDataset GroupedDataset::subset(const std::vector<std::size_t>& indices,
                                      bool allow_empty_groups) const {
  std::vector<double> x;
  std::vector<int> y, g;
  x.reserve(indices.size() * feature_dim_);
  for (std::size_t i : indices) {
    if (i >= size()) throw IndexError("dataset subset: row " + std::to_string(i));
    x.insert(x.end(), features_.begin() + static_cast<std::ptrdiff_t>(i * feature_dim_),
             features_.begin() + static_cast<std::ptrdiff_t>((i + 1) * feature_dim_));
    y.push_back(labels_[i]);
    g.push_back(groups_[i]);
  }
  return GroupedDataset(feature_dim_, std::move(x), std::move(y), std::move(g), group_names_,
                        num_classes_, allow_empty_groups);
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticSpec::validate() const {
  if (feature_dim == 0) throw ConfigError("synthetic: feature dimension must be positive");
  if (num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (group_sizes.empty()) throw ConfigError("synthetic: need at least one group");
  if (group_sizes.size() != noise_scales.size()) {
    throw ConfigError("synthetic: " + std::to_string(group_sizes.size()) + " group sizes but " +
                      std::to_string(noise_scales.size()) + " noise scales");
  }
  for (double s : noise_scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("synthetic: noise scales must be > 0");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("synthetic: test fraction must lie in (0, 1)");
  }
}

TrainTestSplit synthetic_generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t d = spec.feature_dim, k = spec.num_classes, num_groups = spec.group_sizes.size();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> means(k * d);
  for (std::size_t c = 0; c < k; ++c) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        means[c * d + j] = normal(rng);
        norm2 += means[c * d + j] * means[c * d + j];
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < d; ++j) means[c * d + j] *= inv;
  }

  std::vector<std::string> names;
  for (std::size_t g = 0; g < num_groups; ++g) names.push_back("g" + std::to_string(g));

  std::vector<double> x_train, x_test;
  std::vector<int> y_train, y_test, g_train, g_test;
  for (std::size_t g = 0; g < num_groups; ++g) {
    const std::size_t n = spec.group_sizes[g];
    std::size_t n_train = 0, n_test = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t cell = n / k + (c < n % k ? 1 : 0);
      const auto cell_test =
          static_cast<std::size_t>(std::round(spec.test_fraction * static_cast<double>(cell)));
      for (std::size_t s = 0; s < cell; ++s) {
        const bool to_test = s >= cell - cell_test;
        auto& x = to_test ? x_test : x_train;
        for (std::size_t j = 0; j < d; ++j) {
          x.push_back(means[c * d + j] + spec.noise_scales[g] * normal(rng));
        }
        (to_test ? y_test : y_train).push_back(static_cast<int>(c));
        (to_test ? g_test : g_train).push_back(static_cast<int>(g));
      }
      n_test += cell_test;
      n_train += cell - cell_test;
    }
    if (n_train < k || n_test < k) {
      throw ConfigError("synthetic: group '" + names[g] + "' has " + std::to_string(n_train) +
                        " train / " + std::to_string(n_test) + " test samples, fewer than " +
                        std::to_string(k) + " classes");
    }
  }
  return TrainTestSplit{
      GroupedDataset(d, std::move(x_train), std::move(y_train), std::move(g_train), names, k),
      GroupedDataset(d, std::move(x_test), std::move(y_test), std::move(g_test), names, k)};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

GroupedDataset load_csv(const std::string& path, const std::vector<std::string>* known_groups) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw FormatError(path + ": empty file, expected header f0,...,label,group");
  }
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "group") {
    throw FormatError(path + ":1: header must be f0,...,f{d-1},label,group");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw FormatError(path + ":1: expected column 'f" + std::to_string(j) + "', got '" +
                        header[j] + "'");
    }
  }

  std::vector<std::string> names = known_groups ? *known_groups : std::vector<std::string>{};
  std::unordered_map<std::string, int> ids;
  for (std::size_t g = 0; g < names.size(); ++g) ids.emplace(names[g], static_cast<int>(g));

  std::vector<double> x;
  std::vector<int> y, groups;
  int max_label = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (cells.size() != d + 2) {
      throw ParseError(where + "expected " + std::to_string(d + 2) + " cells, got " +
                       std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      const char* begin = cells[j].c_str();
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(begin, &end);
      if (cells[j].empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
        throw ParseError(where + "non-numeric feature '" + cells[j] + "' in column f" +
                         std::to_string(j));
      }
      x.push_back(v);
    }
    {
      const char* begin = cells[d].c_str();
      char* end = nullptr;
      errno = 0;
      const long v = std::strtol(begin, &end, 10);
      if (cells[d].empty() || *end != '\0' || errno == ERANGE || v < 0 || v > 1'000'000) {
        throw ParseError(where + "invalid label '" + cells[d] + "'");
      }
      y.push_back(static_cast<int>(v));
      max_label = std::max(max_label, static_cast<int>(v));
    }
    const std::string& name = cells[d + 1];
    if (name.empty()) throw ParseError(where + "empty group");
    auto it = ids.find(name);
    if (it == ids.end()) {
      if (known_groups) {
        throw ConfigError(where + "group '" + name + "' does not occur in the training data");
      }
      it = ids.emplace(name, static_cast<int>(names.size())).first;
      names.push_back(name);
    }
    groups.push_back(it->second);
  }
  if (y.empty()) throw FormatError(path + ": no data rows");
  const std::size_t k = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  return GroupedDataset(d, std::move(x), std::move(y), std::move(groups), std::move(names), k,
                        known_groups != nullptr);
}

void write_csv(const GroupedDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (std::size_t j = 0; j < data.feature_dim(); ++j) out << "f" << j << ",";
  out << "label,group\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.feature_dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.features()[i * data.feature_dim() + j]);
      out << buf << ",";
    }
    out << data.labels()[i] << "," << data.group_names()[static_cast<std::size_t>(data.groups()[i])]
        << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t base_seed,
                                           std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(base_seed, epoch));
  // Fisher-Yates with our own index draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
  }
  return perm;
}

GroupedBatch make_batch(const GroupedDataset& data, std::span<const std::size_t> indices) {
  const std::size_t d = data.feature_dim();
  GroupedBatch batch;
  std::vector<double> x;
  x.reserve(indices.size() * d);
  batch.members.resize(data.num_groups());
  for (std::size_t pos = 0; pos < indices.size(); ++pos) {
    const std::size_t i = indices[pos];
    const auto row = data.features().begin() + static_cast<std::ptrdiff_t>(i * d);
    x.insert(x.end(), row, row + static_cast<std::ptrdiff_t>(d));
    batch.labels.push_back(data.labels()[i]);
    batch.groups.push_back(data.groups()[i]);
    batch.indices.push_back(i);
    batch.members[static_cast<std::size_t>(data.groups()[i])].push_back(pos);
  }
  batch.features = Tensor::matrix(indices.size(), d, std::move(x));
  return batch;
}

std::vector<GroupedBatch> iterate_batches(const GroupedDataset& data, std::size_t batch_size,
                                          std::uint64_t base_seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  const auto perm = epoch_permutation(data.size(), base_seed, epoch);
  std::vector<GroupedBatch> batches;
  for (std::size_t begin = 0; begin < perm.size(); begin += batch_size) {
    const std::size_t end = std::min(perm.size(), begin + batch_size);
    batches.push_back(make_batch(data, std::span(perm).subspan(begin, end - begin)));
  }
  return batches;
}

}  // namespace fairsparse
