#include "fairsparse/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fairsparse/errors.hpp"
#include "fairsparse/group_metrics.hpp"
#include "fairsparse/rng.hpp"

namespace fairsparse {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void MlpSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (hidden_dims.empty()) throw ConfigError("model: need at least one hidden layer");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("model: hidden widths must be positive");
  }
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
}

void MlpSpec::validate_for_pruning() const {
  validate();
  if (hidden_dims.size() < 2) {
    throw ConfigError("model: " + std::to_string(num_layers()) +
                      "-layer MLP has no prunable layer (first and last layers stay dense)");
  }
}

Tensor Layer::effective_weight() const {
  std::vector<double> m(mask.begin(), mask.end());
  return kernels::mul(weight, Tensor(weight.shape(), std::move(m)));
}

MaskedMlp::MaskedMlp(MlpSpec spec, std::vector<Layer> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)) {
  spec_.validate();
  if (layers_.size() != spec_.num_layers()) {
    throw DimensionError("model: " + std::to_string(layers_.size()) + " layers for spec with " +
                         std::to_string(spec_.num_layers()));
  }
  std::size_t in = spec_.input_dim;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t out = l + 1 < layers_.size() ? spec_.hidden_dims[l] : spec_.num_classes;
    Layer& layer = layers_[l];
    if (layer.weight.shape() != Shape{out, in} || layer.bias.shape() != Shape{out} ||
        layer.mask.size() != out * in) {
      throw DimensionError("model: layer " + std::to_string(l + 1) + " has weight " +
                           shape_to_string(layer.weight.shape()) + ", expected " +
                           shape_to_string({out, in}));
    }
    for (std::uint8_t m : layer.mask) {
      if (m > 1) throw ConfigError("model: mask entries must be 0 or 1");
    }
    layer.prunable = l > 0 && l + 1 < layers_.size();
    in = out;
  }
}

MaskedMlp MaskedMlp::init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<Layer> layers;
  std::size_t in = spec.input_dim;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t out = l < spec.hidden_dims.size() ? spec.hidden_dims[l] : spec.num_classes;
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::vector<double> w(out * in);
    for (double& v : w) v = (2.0 * uniform01(rng) - 1.0) * bound;
    Layer layer;
    layer.weight = Tensor::matrix(out, in, std::move(w));
    layer.bias = Tensor::zeros({out});
    layer.mask.assign(out * in, 1);
    layers.push_back(std::move(layer));
    in = out;
  }
  return MaskedMlp(spec, std::move(layers));
}

void MaskedMlp::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.shape()[1] != spec_.input_dim) {
    throw DimensionError("model: input of shape " + shape_to_string(x.shape()) +
                         " does not match input_dim " + std::to_string(spec_.input_dim));
  }
}

Tensor MaskedMlp::logits(const Tensor& x) const {
  check_input(x);
  Tensor h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    h = kernels::add_bias(kernels::matmul(h, kernels::transpose(layer.effective_weight())),
                          layer.bias);
    if (l + 1 < layers_.size()) h = kernels::relu(h);
  }
  kernels::check_finite(h.values(), "forward");
  return h;
}

TapedForward MaskedMlp::forward(Tape& tape, Var x) const {
  check_input(tape.value(x));
  TapedForward out;
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Tensor w = layer.weight;
    w.requires_grad = true;
    Tensor b = layer.bias;
    b.requires_grad = true;
    const Var wv = tape.leaf(std::move(w));
    const Var bv = tape.leaf(std::move(b));
    const Var mv = tape.constant(
        Tensor(layer.weight.shape(), std::vector<double>(layer.mask.begin(), layer.mask.end())));
    h = add_bias(tape, matmul(tape, h, transpose(tape, mul(tape, wv, mv))), bv);
    if (l + 1 < layers_.size()) h = relu(tape, h);
    out.weights.push_back(wv);
    out.biases.push_back(bv);
  }
  out.logits = h;
  return out;
}

ModelGradients MaskedMlp::gradients(const Tape& tape, const TapedForward& fwd) const {
  ModelGradients grads;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Tensor gw = tape.grad(fwd.weights.at(l));
    const Tensor gb = tape.grad(fwd.biases.at(l));
    grads.weights.emplace_back(gw.values().begin(), gw.values().end());
    grads.biases.emplace_back(gb.values().begin(), gb.values().end());
  }
  return grads;
}

void MaskedMlp::apply_masks() {
  for (Layer& layer : layers_) {
    auto w = layer.weight.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i)
      if (layer.mask[i] == 0) w[i] = 0.0;
  }
}

double MaskedMlp::sparsity() const {
  std::size_t total = 0, pruned = 0;
  for (const Layer& layer : layers_) {
    if (!layer.prunable) continue;
    total += layer.mask.size();
    pruned += static_cast<std::size_t>(std::count(layer.mask.begin(), layer.mask.end(), 0));
  }
  return total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
}

bool MaskedMlp::operator==(const MaskedMlp& other) const {
  if (!(spec_ == other.spec_) || layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& a = layers_[l];
    const Layer& b = other.layers_[l];
    if (!std::ranges::equal(a.weight.values(), b.weight.values()) ||
        !std::ranges::equal(a.bias.values(), b.bias.values()) || a.mask != b.mask) {
      return false;
    }
  }
  return true;
}

std::vector<int> predict(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("predict: expected B x K logits, got " +
                         shape_to_string(logits.shape()));
  }
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  std::vector<int> out(rows);
  const auto z = logits.values();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = z.data() + i * k;
    // max_element returns the first maximum, i.e. the lowest index on ties.
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

std::vector<std::uint8_t> per_sample_accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto pred = predict(logits);
  if (pred.size() != labels.size()) {
    throw DimensionError("per_sample_accuracy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(pred.size()) + " rows");
  }
  const std::size_t k = logits.shape()[1];
  std::vector<std::uint8_t> correct(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw IndexError("per_sample_accuracy: label " + std::to_string(labels[i]) +
                       " outside [0, " + std::to_string(k) + ")");
    }
    correct[i] = pred[i] == labels[i] ? 1 : 0;
  }
  return correct;
}

std::vector<PrunableLayerRef> prunable_layers(MaskedMlp& model) {
  std::vector<PrunableLayerRef> out;
  auto& layers = model.layers();
  for (std::size_t l = 1; l + 1 < layers.size(); ++l) out.push_back({l + 1, &layers[l]});
  return out;
}

BaselineSnapshot snapshot_baseline(const MaskedMlp& model, const GroupedDataset& data) {
  const GroupStats stats = dataset_group_stats(model, data);
  return BaselineSnapshot{stats.group_accuracy, stats.accuracy, stats.group_loss, stats.loss};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'S', 'M', 'L', 'P', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); }

void put_f64s(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError(path + ": truncated header");
  return v;
}

std::vector<double> get_f64s(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8))) {
    throw FormatError(path + ": truncated parameter block");
  }
  return v;
}

}  // namespace

void save_checkpoint(const MaskedMlp& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const MlpSpec& spec = model.spec();
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(spec.input_dim));
  put_u32(out, static_cast<std::uint32_t>(spec.hidden_dims.size()));
  for (std::size_t h : spec.hidden_dims) put_u32(out, static_cast<std::uint32_t>(h));
  put_u32(out, static_cast<std::uint32_t>(spec.num_classes));
  for (const Layer& layer : model.layers()) {
    put_f64s(out, layer.weight.values());
    put_f64s(out, layer.bias.values());
    std::vector<char> bits((layer.mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < layer.mask.size(); ++i)
      if (layer.mask[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
    out.write(bits.data(), static_cast<std::streamsize>(bits.size()));
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

MaskedMlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError(path + ": not a model checkpoint");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kFormatVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  MlpSpec spec;
  spec.input_dim = get_u32(in, path);
  const std::uint32_t num_hidden = get_u32(in, path);
  if (num_hidden > 1024) throw FormatError(path + ": implausible layer count");
  for (std::uint32_t i = 0; i < num_hidden; ++i) spec.hidden_dims.push_back(get_u32(in, path));
  spec.num_classes = get_u32(in, path);
  spec.validate();

  std::vector<Layer> layers;
  std::size_t fan_in = spec.input_dim;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t out = l < num_hidden ? spec.hidden_dims[l] : spec.num_classes;
    Layer layer;
    layer.weight = Tensor::matrix(out, fan_in, get_f64s(in, out * fan_in, path));
    layer.bias = Tensor::vector(get_f64s(in, out, path));
    std::vector<char> bits((out * fan_in + 7) / 8);
    if (!in.read(bits.data(), static_cast<std::streamsize>(bits.size()))) {
      throw FormatError(path + ": truncated mask block");
    }
    layer.mask.resize(out * fan_in);
    for (std::size_t i = 0; i < layer.mask.size(); ++i)
      layer.mask[i] = static_cast<std::uint8_t>((bits[i / 8] >> (i % 8)) & 1);
    layers.push_back(std::move(layer));
    fan_in = out;
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path + ": trailing bytes after last layer");
  }
  return MaskedMlp(spec, std::move(layers));
}

MaskedMlp load_checkpoint(const std::string& path, const MlpSpec& expected) {
  MaskedMlp model = load_checkpoint(path);
  if (!(model.spec() == expected)) {
    throw ConfigError(path + ": checkpoint architecture does not match the configured model");
  }
  return model;
}

}  // namespace fairsparse
