#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairsparse/autodiff.hpp"
#include "fairsparse/data.hpp"

namespace fairsparse {

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;

  // Positive widths, >= 1 hidden layer, >= 2 classes.
  void validate() const;
  // Additionally requires an interior (prunable) layer, i.e. >= 2 hidden layers.
  void validate_for_pruning() const;
  std::size_t num_layers() const { return hidden_dims.size() + 1; }

  bool operator==(const MlpSpec&) const = default;
};

using Mask = std::vector<std::uint8_t>;

struct Layer {
  Tensor weight;  // out x in
  Tensor bias;    // out
  Mask mask;      // out x in, entries in {0, 1}
  bool prunable = false;

  std::size_t fan_in() const { return weight.shape()[1]; }
  std::size_t fan_out() const { return weight.shape()[0]; }
  Tensor effective_weight() const;
};

// Parameter handles produced by a taped forward pass.
struct TapedForward {
  Var logits;
  std::vector<Var> weights;
  std::vector<Var> biases;
};

// Gradients in layer order, same shapes as the parameters.
struct ModelGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
};

class MaskedMlp {
 public:
  MaskedMlp() = default;
  MaskedMlp(MlpSpec spec, std::vector<Layer> layers);

  // Uniform weights in +-sqrt(6 / fan_in), zero biases, all-ones masks.
  static MaskedMlp init(const MlpSpec& spec, std::uint64_t seed);

  const MlpSpec& spec() const { return spec_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Inference path (no tape). Bit-identical to the taped path.
  Tensor logits(const Tensor& x) const;
  TapedForward forward(Tape& tape, Var x) const;
  ModelGradients gradients(const Tape& tape, const TapedForward& fwd) const;

  // Hard-zeroes every masked weight.
  void apply_masks();
  // Fraction of masked entries across prunable layers (0 if none).
  double sparsity() const;

  bool operator==(const MaskedMlp&) const;

 private:
  void check_input(const Tensor& x) const;
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

// Argmax per row, ties to the lowest class index.
std::vector<int> predict(const Tensor& logits);
// 1{predict == label}; no gradient.
std::vector<std::uint8_t> per_sample_accuracy(const Tensor& logits, std::span<const int> labels);

struct PrunableLayerRef {
  std::size_t index;  // 1-based layer number
  Layer* layer;
};
// Interior layers only (first and last excluded), ordered by layer index.
std::vector<PrunableLayerRef> prunable_layers(MaskedMlp& model);

// Dense-model statistics held fixed during fine-tuning.
struct BaselineSnapshot {
  std::vector<double> group_accuracy;
  double accuracy = 0.0;
  std::vector<double> group_loss;
  double loss = 0.0;

  bool operator==(const BaselineSnapshot&) const = default;
};

BaselineSnapshot snapshot_baseline(const MaskedMlp& model, const GroupedDataset& data);

// Binary checkpoint: magic, format version, spec, then per layer row-major
// real64 weights, biases and LSB-first bit-packed masks (little endian).
void save_checkpoint(const MaskedMlp& model, const std::string& path);
MaskedMlp load_checkpoint(const std::string& path);
// Rejects checkpoints whose spec differs from `expected`.
MaskedMlp load_checkpoint(const std::string& path, const MlpSpec& expected);

}  // namespace fairsparse
