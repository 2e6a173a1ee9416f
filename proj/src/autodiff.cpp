#include "fairsparse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fairsparse/errors.hpp"

namespace fairsparse {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

namespace {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad_in)
    : requires_grad(requires_grad_in), shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() > 2) {
    throw RankError("tensors are limited to rank 2, got shape " + shape_to_string(shape_));
  }
  if (values_.size() != shape_numel(shape_)) {
    throw DimensionError("value count " + std::to_string(values_.size()) +
                         " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw RankError("item() on tensor of shape " + shape_to_string(shape_));
  }
  return values_[0];
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value produced");
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      // Skipping exact zeros never changes the result: the accumulator starts
      // at +0 and only ever receives signed zeros from these terms.
      if (x == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += x * brow[j];
    }
  }
  return Tensor::matrix(m, n, std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return Tensor::matrix(n, m, std::move(out));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  if (bias.rank() != 1 || bias.numel() != x.shape()[1]) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) +
                         " does not broadcast over " + shape_to_string(x.shape()));
  }
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto b = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return Tensor(x.shape(), std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor(a.shape(), std::move(out));
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor(a.shape(), std::move(out));
}

std::vector<double> cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank2(logits, "cross_entropy");
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  std::vector<double> loss(rows);
  const auto z = logits.values();
  for (std::size_t i = 0; i < rows; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(k) + ")");
    }
    const double* row = z.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    loss[i] = m + std::log(s) - row[y];
  }
  return loss;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor t) {
  Node node;
  node.needs_grad = t.requires_grad;
  node.is_leaf = true;
  t.grad.reset();
  node.value = std::move(t);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor t) {
  t.requires_grad = false;
  return leaf(std::move(t));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  kernels::check_finite(value.values(), "forward");
  Node node;
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](Var v) { return nodes_.at(v.id).needs_grad; });
  if (node.needs_grad) node.backward = std::move(backward);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(Var v) { return nodes_.at(v.id).grad; }

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.size() != node.value.numel()) return Tensor::zeros(node.value.shape());
  return Tensor(node.value.shape(), node.grad);
}

void Tape::backward(Var target) {
  if (target.id >= nodes_.size()) throw IndexError("backward: unknown tape entry");
  if (nodes_[target.id].value.numel() != 1) {
    throw RankError("backward: target must be a scalar, got shape " +
                    shape_to_string(nodes_[target.id].value.shape()));
  }
  for (Node& node : nodes_) {
    if (node.needs_grad) {
      node.grad.assign(node.value.numel(), 0.0);
    } else {
      node.grad.clear();
    }
  }
  if (!nodes_[target.id].needs_grad) return;
  nodes_[target.id].grad[0] = 1.0;
  for (std::size_t i = target.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.is_leaf || !node.backward) continue;
    node.backward(*this, node.grad);
  }
  for (Node& node : nodes_) {
    if (node.is_leaf && node.needs_grad) {
      kernels::check_finite(node.grad, "backward");
      node.value.grad = node.grad;
    }
  }
}

// ---------------------------------------------------------------------------
// Graph ops

Var matmul(Tape& tape, Var a, Var b) {
  Tensor out = kernels::matmul(tape.value(a), tape.value(b));
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    const double* A = av.values().data();
    const double* B = bv.values().data();
    if (t.needs_grad(a)) {
      // dA = G * B^T
      double* dA = t.grad_buffer(a).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          dA[i * k + p] += s;
        }
      }
    }
    if (t.needs_grad(b)) {
      // dB = A^T * G
      double* dB = t.grad_buffer(b).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double x = A[i * k + p];
          if (x == 0.0) continue;
          double* drow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += x * grow[j];
        }
      }
    }
  });
}

Var transpose(Tape& tape, Var a) {
  Tensor out = kernels::transpose(tape.value(a));
  return tape.record(std::move(out), {a}, [a](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const std::size_t m = av.shape()[0], n = av.shape()[1];
    auto da = t.grad_buffer(a);
    // out is n x m
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  std::vector<double> out(av.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av.values()[i] + bv.values()[i];
  return tape.record(Tensor(av.shape(), std::move(out)), {a, b},
                     [a, b](Tape& t, std::span<const double> g) {
                       for (Var v : {a, b}) {
                         if (!t.needs_grad(v)) continue;
                         auto d = t.grad_buffer(v);
                         for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                       }
                     });
}

Var add_bias(Tape& tape, Var x, Var bias) {
  Tensor out = kernels::add_bias(tape.value(x), tape.value(bias));
  return tape.record(std::move(out), {x, bias}, [x, bias](Tape& t, std::span<const double> g) {
    const std::size_t m = t.value(x).shape()[0], n = t.value(x).shape()[1];
    if (t.needs_grad(x)) {
      auto dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (t.needs_grad(bias)) {
      auto db = t.grad_buffer(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
    }
  });
}

Var mul(Tape& tape, Var a, Var b) {
  Tensor out = kernels::mul(tape.value(a), tape.value(b));
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    const auto av = t.value(a).values();
    const auto bv = t.value(b).values();
    if (t.needs_grad(a)) {
      auto da = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto db = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var relu(Tape& tape, Var a) {
  Tensor out = kernels::relu(tape.value(a));
  return tape.record(std::move(out), {a}, [a](Tape& t, std::span<const double> g) {
    const auto av = t.value(a).values();
    auto da = t.grad_buffer(a);
    // Subgradient 0 at exactly 0.
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) da[i] += g[i];
  });
}

Var scale(Tape& tape, Var a, double alpha) {
  const Tensor& av = tape.value(a);
  std::vector<double> out(av.values().begin(), av.values().end());
  for (double& v : out) v *= alpha;
  return tape.record(Tensor(av.shape(), std::move(out)), {a},
                     [a, alpha](Tape& t, std::span<const double> g) {
                       auto da = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) da[i] += alpha * g[i];
                     });
}

Var add_scalar(Tape& tape, Var a, double c) {
  const Tensor& av = tape.value(a);
  std::vector<double> out(av.values().begin(), av.values().end());
  for (double& v : out) v += c;
  return tape.record(Tensor(av.shape(), std::move(out)), {a},
                     [a](Tape& t, std::span<const double> g) {
                       auto da = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                     });
}

Var cross_entropy_per_sample(Tape& tape, Var logits, std::span<const int> labels) {
  std::vector<double> loss = kernels::cross_entropy(tape.value(logits), labels);
  std::vector<int> y(labels.begin(), labels.end());
  return tape.record(
      Tensor::vector(std::move(loss)), {logits},
      [logits, y = std::move(y)](Tape& t, std::span<const double> g) {
        const Tensor& z = t.value(logits);
        const std::size_t rows = z.shape()[0], k = z.shape()[1];
        auto dz = t.grad_buffer(logits);
        const auto zv = z.values();
        for (std::size_t i = 0; i < rows; ++i) {
          if (g[i] == 0.0) continue;
          const double* row = zv.data() + i * k;
          const double m = *std::max_element(row, row + k);
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
          for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - m) / s;
            dz[i * k + j] += g[i] * (p - (static_cast<int>(j) == y[i] ? 1.0 : 0.0));
          }
        }
      });
}

Var weighted_sum(Tape& tape, Var values, std::span<const double> weights) {
  const Tensor& v = tape.value(values);
  if (v.numel() != weights.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for values of shape " + shape_to_string(v.shape()));
  }
  kernels::check_finite(weights, "weighted_sum weights");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * v.values()[i];
  std::vector<double> w(weights.begin(), weights.end());
  return tape.record(Tensor::scalar(s), {values},
                     [values, w = std::move(w)](Tape& t, std::span<const double> g) {
                       auto dv = t.grad_buffer(values);
                       for (std::size_t i = 0; i < w.size(); ++i) dv[i] += g[0] * w[i];
                     });
}

}  // namespace fairsparse
