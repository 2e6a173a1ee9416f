#pragma once

// Minimal tape-based reverse-mode differentiation over dense real64 tensors of
// rank <= 2. Enough for masked MLPs trained with cross-entropy.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairsparse {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() : shape_{}, values_(1, 0.0) {}  // scalar zero
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }
  // Rank-2: rows x cols. Rank-1 is treated as a single row, rank-0 as 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() { return values_; }
  double item() const;
  double at(std::size_t i) const { return values_.at(i); }
  double at(std::size_t r, std::size_t c) const { return values_.at(r * cols() + c); }

  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Records a leaf. Its gradient is tracked iff `t.requires_grad`.
  Var leaf(Tensor t);
  Var constant(Tensor t);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last `backward` target w.r.t. `v`; zeros if `v` did not
  // influence it.
  Tensor grad(Var v) const;

  // Populates gradients of every requires_grad leaf. `target` must hold
  // exactly one element.
  void backward(Var target);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Records an op. Used by the free functions below; exposed so callers can
  // add ops without touching the tape internals.
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  // Accumulation target for the gradient of `v` during backward.
  std::span<double> grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    bool needs_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
};

// Graph ops. All of them validate shapes and reject non-finite results.
Var matmul(Tape& tape, Var a, Var b);
Var transpose(Tape& tape, Var a);
Var add(Tape& tape, Var a, Var b);
// Adds a length-n vector to every row of an m x n matrix.
Var add_bias(Tape& tape, Var x, Var bias);
Var mul(Tape& tape, Var a, Var b);
Var relu(Tape& tape, Var a);
Var scale(Tape& tape, Var a, double alpha);
Var add_scalar(Tape& tape, Var a, double c);
// Per-row negative log-softmax of the labelled class; returns a length-B vector.
Var cross_entropy_per_sample(Tape& tape, Var logits, std::span<const int> labels);
// sum_i weights[i] * values[i] as a rank-0 tensor.
Var weighted_sum(Tape& tape, Var values, std::span<const double> weights);

// Tape-free kernels shared by the graph ops and by inference paths, so both
// produce bit-identical values.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
std::vector<double> cross_entropy(const Tensor& logits, std::span<const int> labels);
void check_finite(std::span<const double> values, const char* op);
}  // namespace kernels

}  // namespace fairsparse
