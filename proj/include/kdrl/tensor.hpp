// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Dense row-major matrices with tape-based reverse-mode differentiation. Every tensor
// is two-dimensional; scalars are 1x1 and per-sample quantities are Bx1 columns.
namespace kdrl::nn {

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->values.size(); }

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  double at(std::size_t r, std::size_t c) const { return node_->values[r * node_->shape.cols + c]; }
  // Value of a 1x1 tensor.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Identity of the underlying storage; copies of a Tensor share it.
  bool same(const Tensor& other) const { return node_ == other.node_; }

  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;

    std::vector<double>& ensure_grad() {
      if (grad.empty()) grad.assign(values.size(), 0.0);
      return grad;
    }
  };

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Ordered record of differentiable operations. Ops append in execution order, which is
// a topological order of the graph, so backward replays the list in reverse.
class Tape {
 public:
  // Records the backward rule for `output`. Called by the op implementations.
  void record(const Tensor& output, std::function<void()> backward_rule);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule once in reverse order.
  // Leaf gradients accumulate across calls; intermediate gradients are reset first.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<Tensor::Node> output;
    std::function<void()> rule;
  };
  std::vector<Entry> entries_;
};

// x[B,in] * W[in,out] + b[1,out]. Zero entries of x are skipped, which makes one-hot
// inputs cheap.
Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
// Row-wise.
Tensor softmax(Tape& tape, const Tensor& z);
Tensor log_softmax(Tape& tape, const Tensor& z);
// out[i] = x[i, index[i]] as a Bx1 column.
Tensor gather(Tape& tape, const Tensor& x, std::span<const int> index);
Tensor gather_log_prob(Tape& tape, const Tensor& logits, std::span<const int> actions);
// Row-wise entropy of softmax(logits), Bx1.
Tensor entropy(Tape& tape, const Tensor& logits);
// Row-wise KL(p || softmax(logits_q)), Bx1. `p` is a constant row-major [B,n] matrix of
// distributions; the gradient flows into logits_q only.
Tensor kl_categorical(Tape& tape, std::span<const double> p, const Tensor& logits_q);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double s);
Tensor exp(Tape& tape, const Tensor& a);
Tensor clamp(Tape& tape, const Tensor& a, double lo, double hi);
Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b);
Tensor square(Tape& tape, const Tensor& a);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
// Column j of a, Bx1.
Tensor column(Tape& tape, const Tensor& a, std::size_t j);

// Tolerance used when validating probability vectors.
inline constexpr double kSimplexTolerance = 1e-6;

// Throws std::invalid_argument unless every row of the [rows, n] matrix is a distribution.
void check_simplex_rows(std::span<const double> p, std::size_t n);

// Plain (untaped) helpers.
std::vector<double> softmax_row(std::span<const double> z);
std::vector<double> log_softmax_row(std::span<const double> z);

}  // namespace kdrl::nn
